//! Central-difference gradient checker.

use super::{AutodiffError, Tape, Tensor, Var};

/// Relative error with a `1e-8` floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
}

/// Compares the tape's gradients with `(f(θ + eps·e_i) − f(θ − eps·e_i)) / 2eps`.
#[derive(Clone, Debug)]
pub struct GradChecker {
    pub eps: f64,
    /// Checks at most this many evenly strided coordinates per parameter.
    /// `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradChecker {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_param: None,
        }
    }
}

impl GradChecker {
    pub fn run<F, E>(&self, f: F, params: &[Tensor<f64>]) -> Result<GradCheckReport, E>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
        E: From<AutodiffError>,
    {
        let eval = |values: &[Tensor<f64>]| -> Result<f64, E> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
            let out = f(&mut tape, &vars)?;
            let s = tape.shape(out);
            if s != [1, 1] {
                return Err(AutodiffError::NotScalarLoss { shape: s.to_vec() }.into());
            }
            Ok(tape.value(out).item())
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(params)
            .map(|(&v, p)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
            })
            .collect();

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            coords_checked: 0,
        };
        let mut probe: Vec<Tensor<f64>> = params.to_vec();
        for (pi, param) in params.iter().enumerate() {
            for coord in self.coords(param.len()) {
                let orig = param.data()[coord];
                probe[pi].data_mut()[coord] = orig + self.eps;
                let plus = eval(&probe)?;
                probe[pi].data_mut()[coord] = orig - self.eps;
                let minus = eval(&probe)?;
                probe[pi].data_mut()[coord] = orig;

                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = analytic[pi].data()[coord];
                let err = relative_error(a, numeric);
                report.coords_checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some((pi, coord));
                    report.analytic_at_worst = a;
                    report.numeric_at_worst = numeric;
                }
            }
        }
        Ok(report)
    }

    fn coords(&self, len: usize) -> Vec<usize> {
        match self.max_coords_per_param {
            Some(k) if k < len => {
                let mut picked: Vec<usize> = (0..k).map(|i| i * len / k).collect();
                picked.dedup();
                picked
            }
            _ => (0..len).collect(),
        }
    }
}

/// Full check over every coordinate; returns the maximum relative error.
pub fn grad_check<F, E>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let checker = GradChecker {
        eps,
        max_coords_per_param: None,
    };
    Ok(checker.run(f, params)?.max_rel_error)
}
