//! Dense row-major 2-D arrays and the numeric kernels behind the tape.
//!
//! Every kernel reduces in index-ascending order and never fuses
//! multiply-add, so results are bitwise reproducible on a given target.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::AutodiffError;

/// Floating-point element type usable on a tape.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Name recorded in checkpoint headers.
    const NAME: &'static str;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// A `rows x cols` matrix. Vectors are `1 x n`, scalars `1 x 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &[self.rows, self.cols])
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, AutodiffError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(AutodiffError::InvalidShape {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from an arbitrary shape list of one or two positive dims.
    pub fn from_shape(shape: &[usize], data: Vec<T>) -> Result<Self, AutodiffError> {
        match *shape {
            [n] => Self::new(1, n, data),
            [r, c] => Self::new(r, c, data),
            _ => Err(AutodiffError::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            }),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dims must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "tensor dims must be positive");
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.data[r * self.cols + c]);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Sum of squares, accumulated in `f64`.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }
}

/// `out += a * b` with `a: m x k`, `b: k x n`, `out: m x n` (all row-major).
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * b_pj;
            }
        }
    }
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Tensor::zeros(a.rows, b.cols);
    gemm_acc(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    out
}

/// `out += a * b^T` with `a: m x k`, `b: n x k`.
pub(crate) fn gemm_acc_bt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    let (k, n) = (a.cols, b.rows);
    for (a_row, out_row) in a.data.chunks_exact(k).zip(out.data.chunks_exact_mut(n)) {
        for (o, b_row) in out_row.iter_mut().zip(b.data.chunks_exact(k)) {
            *o = *o + dot(a_row, b_row);
        }
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed order.
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xs = x.chunks_exact(8);
    let ys = y.chunks_exact(8);
    let mut tail = T::zero();
    for (a, b) in xs.remainder().iter().zip(ys.remainder()) {
        tail = tail + *a * *b;
    }
    for (xc, yc) in xs.zip(ys) {
        for l in 0..8 {
            acc[l] = acc[l] + xc[l] * yc[l];
        }
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// `out += a^T * b` with `a: k x m`, `b: k x n`.
pub(crate) fn gemm_acc_at<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>) {
    let (k, m, n) = (a.rows, a.cols, b.cols);
    for p in 0..k {
        let a_row = &a.data[p * m..(p + 1) * m];
        let b_row = &b.data[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == T::zero() {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_pi * b_pj;
            }
        }
    }
}

/// Numerically stable softmax of one row restricted to `mask`; masked
/// entries come out as exact zeros. Returns `None` when nothing is unmasked.
pub fn masked_softmax_row<T: Scalar>(logits: &[T], mask: &[bool]) -> Option<Vec<T>> {
    debug_assert_eq!(logits.len(), mask.len());
    let mut max = T::neg_infinity();
    let mut any = false;
    for (&x, &m) in logits.iter().zip(mask) {
        if m {
            any = true;
            if x > max {
                max = x;
            }
        }
    }
    if !any {
        return None;
    }
    let mut out: Vec<T> = logits
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - max).exp() } else { T::zero() })
        .collect();
    let mut total = T::zero();
    for &e in &out {
        total = total + e;
    }
    for e in &mut out {
        *e = *e / total;
    }
    Some(out)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
