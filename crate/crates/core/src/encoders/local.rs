//! Local sentence encoder: token embeddings, a Bi-LSTM, and learned
//! softmax-weighted pooling over time.

use super::lstm::{project_inputs, run_direction};
use super::params::ModelVars;
use super::{Hyperparams, ModelError};
use crate::autodiff::{Axis, Scalar, Tape, Var};
use crate::corpus::{PrefixedSentence, PAD};

/// Encodes a batch of sentences into a `batch x 2*lse_hidden` matrix, one
/// row per sentence in input order.
pub fn lse_forward_batch<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    sentences: &[PrefixedSentence],
) -> Result<Var, ModelError> {
    if sentences.is_empty() {
        return Err(ModelError::EmptyDocument);
    }
    let lengths: Vec<usize> = sentences.iter().map(PrefixedSentence::len).collect();
    if lengths.contains(&0) {
        return Err(ModelError::EmptySentence);
    }
    if let Some(&long) = lengths.iter().find(|&&l| l > hp.t_cap) {
        return Err(ModelError::SentenceTooLong {
            len: long,
            t_cap: hp.t_cap,
        });
    }
    let batch = sentences.len();
    let steps = *lengths.iter().max().expect("non-empty");
    let h = hp.lse_hidden;

    let mut ids = Vec::with_capacity(steps * batch);
    for t in 0..steps {
        for s in sentences {
            ids.push(s.token_ids.get(t).copied().unwrap_or(PAD));
        }
    }
    let x = tape.gather_rows(mv.embed, &ids)?;
    let xf = project_inputs(tape, &mv.lse.fwd, x)?;
    let xb = project_inputs(tape, &mv.lse.bwd, x)?;
    let fwd = run_direction(tape, &mv.lse.fwd, xf, batch, steps, h, false, None)?;
    let bwd = run_direction(tape, &mv.lse.bwd, xb, batch, steps, h, true, Some(&lengths))?;

    let mut per_step = Vec::with_capacity(steps);
    for t in 0..steps {
        per_step.push(tape.concat(&[fwd[t], bwd[t]], Axis::Cols)?);
    }
    let states = tape.concat(&per_step, Axis::Rows)?;
    let scores = tape.matmul(states, mv.lse_pool)?;

    let mut pooled = Vec::with_capacity(batch);
    for (i, &len) in lengths.iter().enumerate() {
        let rows: Vec<usize> = (0..len).map(|t| t * batch + i).collect();
        let r = tape.gather_rows(states, &rows)?;
        let w = tape.gather_rows(scores, &rows)?;
        pooled.push(tape.weighted_pool(r, w)?);
    }
    Ok(tape.concat(&pooled, Axis::Rows)?)
}

/// Encodes one sentence into a `1 x 2*lse_hidden` row.
pub fn lse_forward<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    sentence: &PrefixedSentence,
) -> Result<Var, ModelError> {
    if sentence.is_empty() {
        return Err(ModelError::EmptySentence);
    }
    lse_forward_batch(tape, mv, hp, std::slice::from_ref(sentence))
}
