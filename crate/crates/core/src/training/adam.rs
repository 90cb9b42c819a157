//! Adam with bias correction and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// L2 norm over every gradient entry, accumulated in f64.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    let mut s = 0.0;
    for g in grads {
        for &x in g.data() {
            let x = x.as_f64();
            s += x * x;
        }
    }
    s.sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::lit(max_norm / norm);
        for g in grads {
            for x in g.data_mut() {
                *x = *x * scale;
            }
        }
    }
    norm
}
