//! Recording tape, primitive operations and the reverse sweep.

use super::tensor::{gemm_acc, gemm_acc_at, gemm_acc_bt, masked_softmax_row, matmul, sigmoid};
use super::{AutodiffError, Scalar, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Affine(Var, T),
    Concat(Vec<Var>, Axis),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    Clamp(Var, T, T),
    Sum(Var),
    MeanRows(Var),
    MaskedSoftmax(Var),
    WeightedPool {
        rows: Var,
        logits: Var,
        weights: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Tensor<T>,
        scale: T,
    },
    Select(Var, usize, usize),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order of the
/// graph: an op can only consume nodes that already exist.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, `None` until a backward pass reaches `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Drops every node created after the first `len`; their vars become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_var(&self, v: Var) -> Result<(), AutodiffError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownVar(v.0))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = matmul(self.value(a), self.value(b));
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x + bias` with `bias: 1 x n` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb[0] != 1 || sb[1] != sx[1] {
            return Err(shape_err("add_bias", sx, sb));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(sx[1]) {
            for (o, &bj) in row.iter_mut().zip(&b) {
                *o = *o + bj;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyInput("concat"))?;
        for &p in parts {
            self.check_var(p)?;
        }
        let s0 = self.shape(first);
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s[1] != s0[1] {
                        return Err(shape_err("concat_rows", s0, s));
                    }
                    rows += s[0];
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(rows, s0[1], data)?
            }
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s[0] != s0[0] {
                        return Err(shape_err("concat_cols", s0, s));
                    }
                    cols += s[1];
                }
                let mut data = Vec::with_capacity(s0[0] * cols);
                for r in 0..s0[0] {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::new(s0[0], cols, data)?
            }
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if len == 0 || start + len > s[0] {
            return Err(shape_err("slice_rows", s, [start, len]));
        }
        let data = self.value(x).data()[start * s[1]..(start + len) * s[1]].to_vec();
        let out = Tensor::new(len, s[1], data)?;
        Ok(self.push(out, Op::SliceRows(x, start), &[x]))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if len == 0 || start + len > s[1] {
            return Err(shape_err("slice_cols", s, [start, len]));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = Tensor::new(s[0], len, data)?;
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    /// Picks rows by index (repeats allowed). Doubles as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if index.is_empty() {
            return Err(AutodiffError::EmptyInput("gather_rows"));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(index.len() * s[1]);
        for &i in index {
            if i >= s[0] {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: s[0],
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::new(index.len(), s[1], data)?;
        Ok(self.push(out, Op::GatherRows(x, index.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if rows * cols != s[0] * s[1] {
            return Err(shape_err("reshape", s, [rows, cols]));
        }
        let out = Tensor::new(rows, cols, self.value(x).data().to_vec())?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    /// Natural logarithm. Callers clamp first when the argument may reach 0.
    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(out, Op::Ln(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp(x, lo, hi), &[x])
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut total = T::zero();
        for &v in self.value(x).data() {
            total = total + v;
        }
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Average over the row axis: `m x n -> 1 x n`.
    pub fn mean_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [m, n] = xv.shape();
        let mut acc = vec![T::zero(); n];
        for r in 0..m {
            for (a, &v) in acc.iter_mut().zip(xv.row(r)) {
                *a = *a + v;
            }
        }
        let denom = T::lit(m as f64);
        let out = Tensor::row_vector(acc.into_iter().map(|a| a / denom).collect());
        self.push(out, Op::MeanRows(x), &[x])
    }

    /// Row-wise softmax over entries where `mask` is true; masked entries are
    /// exactly zero. `mask` has one flag per entry of `logits`.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let s = self.shape(logits);
        if mask.len() != s[0] * s[1] {
            return Err(shape_err("masked_softmax", s, [1, mask.len()]));
        }
        let lv = self.value(logits);
        let mut data = Vec::with_capacity(lv.len());
        for r in 0..s[0] {
            let row_mask = &mask[r * s[1]..(r + 1) * s[1]];
            let p = masked_softmax_row(lv.row(r), row_mask).ok_or(AutodiffError::AllMasked { row: r })?;
            data.extend(p);
        }
        let out = Tensor::new(s[0], s[1], data)?;
        Ok(self.push(out, Op::MaskedSoftmax(logits), &[logits]))
    }

    /// Convex combination of `rows: t x n` with weights `softmax(weight_logits)`,
    /// where `weight_logits: t x 1`. Returns `1 x n`.
    pub fn weighted_pool(&mut self, rows: Var, weight_logits: Var) -> Result<Var, AutodiffError> {
        let (sr, sl) = (self.shape(rows), self.shape(weight_logits));
        if sl != [sr[0], 1] {
            return Err(shape_err("weighted_pool", sr, sl));
        }
        let mask = vec![true; sr[0]];
        let weights =
            masked_softmax_row(self.value(weight_logits).data(), &mask).ok_or(AutodiffError::AllMasked { row: 0 })?;
        let rv = self.value(rows);
        let mut acc = vec![T::zero(); sr[1]];
        for (t, &w) in weights.iter().enumerate() {
            for (a, &v) in acc.iter_mut().zip(rv.row(t)) {
                *a = *a + w * v;
            }
        }
        let out = Tensor::row_vector(acc);
        Ok(self.push(
            out,
            Op::WeightedPool {
                rows,
                logits: weight_logits,
                weights,
            },
            &[rows, weight_logits],
        ))
    }

    /// Row-wise layer normalization with `gain, bias: 1 x n`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != [1, s[1]] {
                return Err(shape_err("layer_norm", s, self.shape(p)));
            }
        }
        let xv = self.value(x);
        let n = T::lit(s[1] as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Tensor::zeros(s[0], s[1]);
        let mut inv_std = Vec::with_capacity(s[0]);
        for r in 0..s[0] {
            let row = xv.row(r);
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / n;
            let mut var = T::zero();
            for &v in row {
                var = var + (v - mean) * (v - mean);
            }
            var = var / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (c, &v) in row.iter().enumerate() {
                xhat.data_mut()[r * s[1] + c] = (v - mean) * is;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(s[1]) {
            for ((o, &gj), &bj) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// `softmax(q k^T / sqrt(d)) v` for `q: n x d`, `k: m x d`, `v: m x dv`.
    /// `mask`, when given, has `n * m` flags; false entries are excluded.
    pub fn scaled_dot_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var, AutodiffError> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq[1] != sk[1] {
            return Err(shape_err("attention_qk", sq, sk));
        }
        if sk[0] != sv[0] {
            return Err(shape_err("attention_kv", sk, sv));
        }
        let (n, m) = (sq[0], sk[0]);
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(shape_err("attention_mask", [n, m], [1, mask.len()]));
            }
        }
        let scale = T::one() / T::lit(sq[1] as f64).sqrt();
        let mut scores = Tensor::zeros(n, m);
        gemm_acc_bt(self.value(q), self.value(k), &mut scores);
        let all = vec![true; m];
        let mut probs = Vec::with_capacity(n * m);
        for r in 0..n {
            let row: Vec<T> = scores.row(r).iter().map(|&s| s * scale).collect();
            let row_mask = mask.map_or(&all[..], |mk| &mk[r * m..(r + 1) * m]);
            probs.extend(masked_softmax_row(&row, row_mask).ok_or(AutodiffError::AllMasked { row: r })?);
        }
        let probs = Tensor::new(n, m, probs)?;
        let out = matmul(&probs, self.value(v));
        Ok(self.push(out, Op::Attention { q, k, v, probs, scale }, &[q, k, v]))
    }

    /// Single entry `(r, c)` as a `1 x 1` value.
    pub fn select(&mut self, x: Var, r: usize, c: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x);
        if r >= s[0] || c >= s[1] {
            return Err(shape_err("select", s, [r, c]));
        }
        let out = Tensor::scalar(self.value(x).get(r, c));
        Ok(self.push(out, Op::Select(x, r, c), &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients are added to whatever each node already holds, so two calls
    /// without [`Tape::zero_grad`] in between double every gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        self.check_var(loss)?;
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(AutodiffError::NotScalarLoss { shape: s.to_vec() });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => acc.accumulate(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    let mut ga = Tensor::zeros(val(a).rows(), val(a).cols());
                    gemm_acc_bt(g, val(b), &mut ga);
                    add_grad(grads, a, ga);
                }
                if self.wants(b) {
                    let mut gb = Tensor::zeros(val(b).rows(), val(b).cols());
                    gemm_acc_at(val(a), g, &mut gb);
                    add_grad(grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    add_grad(grads, a, g.clone());
                }
                if self.wants(b) {
                    add_grad(grads, b, g.clone());
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    add_grad(grads, a, g.clone());
                }
                if self.wants(b) {
                    add_grad(grads, b, g.map(|x| -x));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    add_grad(grads, a, g.zip_map(val(b), |x, y| x * y));
                }
                if self.wants(b) {
                    add_grad(grads, b, g.zip_map(val(a), |x, y| x * y));
                }
            }
            &Op::AddBias(x, b) => {
                if self.wants(x) {
                    add_grad(grads, x, g.clone());
                }
                if self.wants(b) {
                    let n = g.cols();
                    let mut gb = vec![T::zero(); n];
                    for r in 0..g.rows() {
                        for (a, &v) in gb.iter_mut().zip(g.row(r)) {
                            *a = *a + v;
                        }
                    }
                    add_grad(grads, b, Tensor::row_vector(gb));
                }
            }
            &Op::Affine(x, scale) => {
                if self.wants(x) {
                    add_grad(grads, x, g.map(|v| v * scale));
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [pr, pc] = val(p).shape();
                    if self.wants(p) {
                        let data = match axis {
                            Axis::Rows => g.data()[offset * pc..(offset + pr) * pc].to_vec(),
                            Axis::Cols => (0..pr)
                                .flat_map(|r| g.row(r)[offset..offset + pc].iter().copied())
                                .collect(),
                        };
                        add_grad(grads, p, Tensor::new(pr, pc, data).expect("concat part"));
                    }
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                }
            }
            &Op::SliceRows(x, start) => {
                if self.wants(x) {
                    let [r, c] = val(x).shape();
                    let mut gx = Tensor::zeros(r, c);
                    gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    add_grad(grads, x, gx);
                }
            }
            &Op::SliceCols(x, start) => {
                if self.wants(x) {
                    let [r, c] = val(x).shape();
                    let w = g.cols();
                    let mut gx = Tensor::zeros(r, c);
                    for row in 0..r {
                        gx.data_mut()[row * c + start..row * c + start + w].copy_from_slice(g.row(row));
                    }
                    add_grad(grads, x, gx);
                }
            }
            Op::GatherRows(x, index) => {
                let x = *x;
                if self.wants(x) {
                    let [r, c] = val(x).shape();
                    let mut gx = Tensor::zeros(r, c);
                    for (k, &src) in index.iter().enumerate() {
                        let dst = &mut gx.data_mut()[src * c..(src + 1) * c];
                        for (d, &v) in dst.iter_mut().zip(g.row(k)) {
                            *d = *d + v;
                        }
                    }
                    add_grad(grads, x, gx);
                }
            }
            &Op::Reshape(x) => {
                if self.wants(x) {
                    let [r, c] = val(x).shape();
                    add_grad(grads, x, Tensor::new(r, c, g.data().to_vec()).expect("reshape"));
                }
            }
            &Op::Sigmoid(x) => {
                if self.wants(x) {
                    add_grad(grads, x, g.zip_map(out, |gi, y| gi * y * (T::one() - y)));
                }
            }
            &Op::Tanh(x) => {
                if self.wants(x) {
                    add_grad(grads, x, g.zip_map(out, |gi, y| gi * (T::one() - y * y)));
                }
            }
            &Op::Relu(x) => {
                if self.wants(x) {
                    add_grad(
                        grads,
                        x,
                        g.zip_map(val(x), |gi, v| if v > T::zero() { gi } else { T::zero() }),
                    );
                }
            }
            &Op::Ln(x) => {
                if self.wants(x) {
                    add_grad(grads, x, g.zip_map(val(x), |gi, v| gi / v));
                }
            }
            &Op::Clamp(x, lo, hi) => {
                if self.wants(x) {
                    add_grad(
                        grads,
                        x,
                        g.zip_map(val(x), |gi, v| if v >= lo && v <= hi { gi } else { T::zero() }),
                    );
                }
            }
            &Op::Sum(x) => {
                if self.wants(x) {
                    let [r, c] = val(x).shape();
                    add_grad(grads, x, Tensor::filled(r, c, g.item()));
                }
            }
            &Op::MeanRows(x) => {
                if self.wants(x) {
                    let [r, c] = val(x).shape();
                    let denom = T::lit(r as f64);
                    let row: Vec<T> = g.data().iter().map(|&v| v / denom).collect();
                    let mut data = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        data.extend_from_slice(&row);
                    }
                    add_grad(grads, x, Tensor::new(r, c, data).expect("mean_pool"));
                }
            }
            &Op::MaskedSoftmax(x) => {
                if self.wants(x) {
                    let [r, c] = out.shape();
                    let mut gx = Tensor::zeros(r, c);
                    for row in 0..r {
                        let y = out.row(row);
                        let gr = g.row(row);
                        let mut dot = T::zero();
                        for (&yi, &gi) in y.iter().zip(gr) {
                            dot = dot + yi * gi;
                        }
                        for (j, (&yi, &gi)) in y.iter().zip(gr).enumerate() {
                            gx.data_mut()[row * c + j] = yi * (gi - dot);
                        }
                    }
                    add_grad(grads, x, gx);
                }
            }
            Op::WeightedPool { rows, logits, weights } => {
                let (rows, logits) = (*rows, *logits);
                let rv = val(rows);
                let [t, n] = rv.shape();
                if self.wants(rows) {
                    let mut gr = Tensor::zeros(t, n);
                    for (step, &w) in weights.iter().enumerate() {
                        for (d, &gv) in gr.data_mut()[step * n..(step + 1) * n].iter_mut().zip(g.data()) {
                            *d = w * gv;
                        }
                    }
                    add_grad(grads, rows, gr);
                }
                if self.wants(logits) {
                    let da: Vec<T> = (0..t)
                        .map(|step| {
                            let mut acc = T::zero();
                            for (&v, &gv) in rv.row(step).iter().zip(g.data()) {
                                acc = acc + v * gv;
                            }
                            acc
                        })
                        .collect();
                    let mut dot = T::zero();
                    for (&w, &d) in weights.iter().zip(&da) {
                        dot = dot + w * d;
                    }
                    let gl: Vec<T> = weights.iter().zip(&da).map(|(&w, &d)| w * (d - dot)).collect();
                    add_grad(grads, logits, Tensor::new(t, 1, gl).expect("pool logits"));
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let [r, c] = xhat.shape();
                if self.wants(gain) {
                    let mut gg = vec![T::zero(); c];
                    for row in 0..r {
                        for ((a, &gv), &xh) in gg.iter_mut().zip(g.row(row)).zip(xhat.row(row)) {
                            *a = *a + gv * xh;
                        }
                    }
                    add_grad(grads, gain, Tensor::row_vector(gg));
                }
                if self.wants(bias) {
                    let mut gb = vec![T::zero(); c];
                    for row in 0..r {
                        for (a, &gv) in gb.iter_mut().zip(g.row(row)) {
                            *a = *a + gv;
                        }
                    }
                    add_grad(grads, bias, Tensor::row_vector(gb));
                }
                if self.wants(x) {
                    let gain_v = val(gain).data();
                    let n = T::lit(c as f64);
                    let mut gx = Tensor::zeros(r, c);
                    for row in 0..r {
                        let dxhat: Vec<T> = g.row(row).iter().zip(gain_v).map(|(&a, &b)| a * b).collect();
                        let xh = xhat.row(row);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for (&d, &h) in dxhat.iter().zip(xh) {
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * h;
                        }
                        let k = inv_std[row] / n;
                        for j in 0..c {
                            gx.data_mut()[row * c + j] = k * (n * dxhat[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                    add_grad(grads, x, gx);
                }
            }
            Op::Attention { q, k, v, probs, scale } => {
                let (q, k, v, scale) = (*q, *k, *v, *scale);
                if self.wants(v) {
                    let mut gv = Tensor::zeros(val(v).rows(), val(v).cols());
                    gemm_acc_at(probs, g, &mut gv);
                    add_grad(grads, v, gv);
                }
                if self.wants(q) || self.wants(k) {
                    let [n, m] = probs.shape();
                    let mut dp = Tensor::zeros(n, m);
                    gemm_acc_bt(g, val(v), &mut dp);
                    let mut ds = Tensor::zeros(n, m);
                    for row in 0..n {
                        let p = probs.row(row);
                        let d = dp.row(row);
                        let mut dot = T::zero();
                        for (&pi, &di) in p.iter().zip(d) {
                            dot = dot + pi * di;
                        }
                        for j in 0..m {
                            ds.data_mut()[row * m + j] = p[j] * (d[j] - dot) * scale;
                        }
                    }
                    if self.wants(q) {
                        let mut gq = Tensor::zeros(val(q).rows(), val(q).cols());
                        gemm_acc(ds.data(), val(k).data(), gq.data_mut(), n, m, val(k).cols());
                        add_grad(grads, q, gq);
                    }
                    if self.wants(k) {
                        let mut gk = Tensor::zeros(val(k).rows(), val(k).cols());
                        gemm_acc_at(&ds, val(q), &mut gk);
                        add_grad(grads, k, gk);
                    }
                }
            }
            &Op::Select(x, r, c) => {
                if self.wants(x) {
                    let [rows, cols] = val(x).shape();
                    let mut gx = Tensor::zeros(rows, cols);
                    gx.data_mut()[r * cols + c] = g.item();
                    add_grad(grads, x, gx);
                }
            }
        }
    }
}

fn add_grad<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match grads[v.0].as_mut() {
        Some(acc) => acc.accumulate(&g),
        None => grads[v.0] = Some(g),
    }
}
