//! Extraction history encoder: post-norm transformer decoder layers with
//! self-attention over the remaining sentences and cross-attention from
//! remaining to extracted sentences. No positional encoding is applied.

use super::params::{AttentionVars, DecoderLayerVars, ModelVars, NormVars};
use super::{Hyperparams, ModelError};
use crate::autodiff::{Axis, Scalar, Tape, Var};

fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

/// Multi-head attention of `queries` over `memory`.
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    a: &AttentionVars,
    heads: usize,
    queries: Var,
    memory: Var,
) -> Result<Var, ModelError> {
    let d = tape.shape(queries)[1];
    let dh = d / heads;
    let q = linear(tape, queries, a.wq, a.bq)?;
    let k = tape.matmul(memory, a.wk)?;
    let v = linear(tape, memory, a.wv, a.bv)?;
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = tape.slice_cols(q, head * dh, dh)?;
        let kh = tape.slice_cols(k, head * dh, dh)?;
        let vh = tape.slice_cols(v, head * dh, dh)?;
        outs.push(tape.scaled_dot_attention(qh, kh, vh, None)?);
    }
    let joined = if heads == 1 {
        outs[0]
    } else {
        tape.concat(&outs, Axis::Cols)?
    };
    linear(tape, joined, a.wo, a.bo)
}

fn add_norm<T: Scalar>(tape: &mut Tape<T>, x: Var, delta: Var, norm: &NormVars) -> Result<Var, ModelError> {
    let s = tape.add(x, delta)?;
    Ok(tape.layer_norm(s, norm.gain, norm.bias)?)
}

pub fn decoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    layer: &DecoderLayerVars,
    heads: usize,
    x: Var,
    memory: Var,
) -> Result<Var, ModelError> {
    let a = multi_head_attention(tape, &layer.self_attn, heads, x, x)?;
    let x = add_norm(tape, x, a, &layer.ln1)?;
    let a = multi_head_attention(tape, &layer.cross_attn, heads, x, memory)?;
    let x = add_norm(tape, x, a, &layer.ln2)?;
    let f = linear(tape, x, layer.ffn_w1, layer.ffn_b1)?;
    let f = tape.relu(f);
    let f = linear(tape, f, layer.ffn_w2, layer.ffn_b2)?;
    add_norm(tape, x, f, &layer.ln3)
}

/// History embeddings (`R x 2*lse_hidden`) for the remaining sentences.
///
/// `extracted` holds the extracted sentences' local embeddings in extraction
/// order; with nothing extracted the learned `u0` row is the only memory.
pub fn ehe_forward<T: Scalar>(
    tape: &mut Tape<T>,
    mv: &ModelVars,
    hp: &Hyperparams,
    remaining: Var,
    extracted: Option<Var>,
) -> Result<Var, ModelError> {
    let dim = hp.model_dim();
    if tape.shape(remaining)[1] != dim {
        return Err(ModelError::Alignment(format!(
            "remaining embeddings have width {}, expected {dim}",
            tape.shape(remaining)[1]
        )));
    }
    let memory = extracted.unwrap_or(mv.u0);
    if tape.shape(memory)[1] != dim {
        return Err(ModelError::Alignment("memory width differs from model dim".into()));
    }
    let mut x = remaining;
    for layer in &mv.ehe {
        x = decoder_layer(tape, layer, hp.ehe_heads, x, memory)?;
    }
    Ok(x)
}
