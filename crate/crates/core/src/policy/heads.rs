//! Scoring and stop heads, and the per-step forward pass they share.

use crate::autodiff::{Axis, Scalar, Tape, Var};
use crate::corpus::PrefixedSentence;
use crate::encoders::{ehe_forward, gce_forward, lse_forward_batch, Hyperparams, ModelError, ModelVars};

#[derive(Clone, Copy, Debug)]
pub struct ScoreOutputs {
    /// `R x 1`
    pub logits: Var,
    /// `R x score_hidden`, the hidden units the stop head pools.
    pub hidden: Var,
}

/// `u_k = relu(W1 [l_k; g_k; h_k] + b1)`, `logit_k = w2 · u_k` for each
/// remaining sentence. The three inputs must be row-aligned.
pub fn score_remaining<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    local: Var,
    global: Var,
    history: Var,
) -> Result<ScoreOutputs, ModelError> {
    let rows = [local, global, history].map(|v| tape.shape(v)[0]);
    if rows[0] != rows[1] || rows[0] != rows[2] {
        return Err(ModelError::Alignment(format!(
            "local/global/history have {} / {} / {} rows",
            rows[0], rows[1], rows[2]
        )));
    }
    let joined = tape.concat(&[local, global, history], Axis::Cols)?;
    let pre = tape.matmul(joined, mv.score_w1)?;
    let pre = tape.add_bias(pre, mv.score_b1)?;
    let hidden = tape.relu(pre);
    let logits = tape.matmul(hidden, mv.score_w2)?;
    Ok(ScoreOutputs { logits, hidden })
}

/// `sigmoid(w · mean_k(u_k) + b)`, a `1 x 1` value.
pub fn stop_prob<T: Scalar>(tape: &mut Tape<T>, mv: &ModelVars, hidden: Var) -> Result<Var, ModelError> {
    let pooled = tape.mean_pool(hidden);
    let z = tape.matmul(pooled, mv.stop_w)?;
    let z = tape.add_bias(z, mv.stop_b)?;
    Ok(tape.sigmoid(z))
}

/// Local and global embeddings of a document; computed once per instance.
#[derive(Clone, Copy, Debug)]
pub struct DocumentEncoding {
    /// `L x 2*lse_hidden`
    pub local: Var,
    /// `L x 2*gce_hidden`
    pub global: Var,
    pub len: usize,
}

pub fn encode_document<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    sentences: &[PrefixedSentence],
) -> Result<DocumentEncoding, ModelError> {
    if sentences.len() > hp.l_cap {
        return Err(ModelError::DocumentTooLong {
            len: sentences.len(),
            l_cap: hp.l_cap,
        });
    }
    let local = lse_forward_batch(tape, mv, hp, sentences)?;
    let global = gce_forward(tape, mv, hp, local)?;
    Ok(DocumentEncoding {
        local,
        global,
        len: sentences.len(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutputs {
    /// `R x 1`, aligned with the `remaining` indices passed in.
    pub logits: Var,
    /// `1 x R` softmax of the logits.
    pub p_extraction: Var,
    /// `1 x 1`
    pub p_stop: Var,
    pub hidden: Var,
}

/// One selection step: history encoding, scores and stop probability for
/// the `remaining` sentences given the `extracted` ones (in extraction order).
pub fn policy_step<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    enc: &DocumentEncoding,
    remaining: &[usize],
    extracted: &[usize],
) -> Result<StepOutputs, ModelError> {
    if remaining.is_empty() {
        return Err(ModelError::NoRemaining);
    }
    let local = tape.gather_rows(enc.local, remaining)?;
    let global = tape.gather_rows(enc.global, remaining)?;
    let memory = if extracted.is_empty() {
        None
    } else {
        Some(tape.gather_rows(enc.local, extracted)?)
    };
    let history = ehe_forward(tape, mv, hp, local, memory)?;
    let scores = score_remaining(tape, mv, local, global, history)?;
    let r = remaining.len();
    let row = tape.reshape(scores.logits, 1, r)?;
    let p_extraction = tape.masked_softmax(row, &vec![true; r])?;
    let p_stop = stop_prob(tape, mv, scores.hidden)?;
    Ok(StepOutputs {
        logits: scores.logits,
        p_extraction,
        p_stop,
        hidden: scores.hidden,
    })
}
