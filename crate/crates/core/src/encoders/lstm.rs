//! LSTM cell and a batched single-direction runner.

use super::params::LstmVars;
use super::ModelError;
use crate::autodiff::{Scalar, Tape, Tensor, Var};

/// One step. `x_proj` is the input already multiplied by `w_x` with the bias
/// added (`batch x 4h`); gate order is input, forget, cell, output.
pub fn lstm_cell<T: Scalar>(
    tape: &mut Tape<T>,
    lstm: &LstmVars,
    x_proj: Var,
    h: Var,
    c: Var,
    hidden: usize,
) -> Result<(Var, Var), ModelError> {
    let rec = tape.matmul(h, lstm.w_h)?;
    let gates = tape.add(x_proj, rec)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// `x · w_x + b` for a whole sequence at once.
pub fn project_inputs<T: Scalar>(tape: &mut Tape<T>, lstm: &LstmVars, x: Var) -> Result<Var, ModelError> {
    let xw = tape.matmul(x, lstm.w_x)?;
    Ok(tape.add_bias(xw, lstm.b)?)
}

/// Runs one direction over `steps` time steps of a time-major batch.
///
/// `x_proj` has `steps * batch` rows; rows `t*batch..(t+1)*batch` hold step
/// `t`. With `reverse`, steps run from last to first, and `lengths` (one per
/// batch row) zero the state of rows whose sequence has not started yet, so
/// every sequence begins at its own last token from a zero state.
///
/// Returns the hidden state of every step, indexed by time.
pub fn run_direction<T: Scalar>(
    tape: &mut Tape<T>,
    lstm: &LstmVars,
    x_proj: Var,
    batch: usize,
    steps: usize,
    hidden: usize,
    reverse: bool,
    lengths: Option<&[usize]>,
) -> Result<Vec<Var>, ModelError> {
    let zeros = tape.constant(Tensor::zeros(batch, hidden));
    let (mut h, mut c) = (zeros, zeros);
    let mut states = vec![zeros; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let xt = tape.slice_rows(x_proj, t * batch, batch)?;
        let (mut hn, mut cn) = lstm_cell(tape, lstm, xt, h, c, hidden)?;
        if reverse {
            if let Some(lengths) = lengths {
                if lengths.iter().any(|&len| t >= len) {
                    let mut mask = Vec::with_capacity(batch * hidden);
                    for &len in lengths {
                        let m = if t < len { T::one() } else { T::zero() };
                        mask.extend(std::iter::repeat(m).take(hidden));
                    }
                    let mask = tape.constant(Tensor::new(batch, hidden, mask)?);
                    hn = tape.mul(hn, mask)?;
                    cn = tape.mul(cn, mask)?;
                }
            }
        }
        states[t] = hn;
        h = hn;
        c = cn;
    }
    Ok(states)
}
