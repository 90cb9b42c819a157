//! Global context encoder: a Bi-LSTM over the document's sentence embeddings.

use super::lstm::{project_inputs, run_direction};
use super::params::ModelVars;
use super::{Hyperparams, ModelError};
use crate::autodiff::{Axis, Scalar, Tape, Var};

/// `sentence_embs: L x 2*lse_hidden` to `L x 2*gce_hidden`.
pub fn gce_forward<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    sentence_embs: Var,
) -> Result<Var, ModelError> {
    let [len, dim] = tape.shape(sentence_embs);
    if dim != hp.model_dim() {
        return Err(ModelError::Alignment(format!(
            "sentence embeddings have width {dim}, expected {}",
            hp.model_dim()
        )));
    }
    if len > hp.l_cap {
        return Err(ModelError::DocumentTooLong { len, l_cap: hp.l_cap });
    }
    let h = hp.gce_hidden;
    let xf = project_inputs(tape, &mv.gce.fwd, sentence_embs)?;
    let xb = project_inputs(tape, &mv.gce.bwd, sentence_embs)?;
    let fwd = run_direction(tape, &mv.gce.fwd, xf, 1, len, h, false, None)?;
    let bwd = run_direction(tape, &mv.gce.bwd, xb, 1, len, h, true, None)?;
    let mut rows = Vec::with_capacity(len);
    for k in 0..len {
        rows.push(tape.concat(&[fwd[k], bwd[k]], Axis::Cols)?);
    }
    Ok(tape.concat(&rows, Axis::Rows)?)
}
