use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::{L_CAP, T_CAP};

/// Model shape and decoding constants.
///
/// Every parameter shape is a function of these fields, see
/// [`super::param_layout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Per-direction hidden size of the sentence encoder.
    pub lse_hidden: usize,
    /// Per-direction hidden size of the document encoder.
    pub gce_hidden: usize,
    pub ehe_layers: usize,
    pub ehe_heads: usize,
    pub ehe_ffn_mult: usize,
    pub score_hidden: usize,
    pub p_stop_threshold: f64,
    pub n_max: usize,
    pub t_cap: usize,
    pub l_cap: usize,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            lse_hidden: 64,
            gce_hidden: 64,
            ehe_layers: 3,
            ehe_heads: 4,
            ehe_ffn_mult: 4,
            score_hidden: 128,
            p_stop_threshold: 0.2,
            n_max: 4,
            t_cap: T_CAP,
            l_cap: L_CAP,
            seed: 0,
        }
    }

    /// Dims used by the gradient checks (`--dims tiny`).
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            embed_dim: 3,
            lse_hidden: 2,
            gce_hidden: 2,
            ehe_heads: 2,
            ehe_ffn_mult: 2,
            score_hidden: 4,
            ..Self::new(vocab_size)
        }
    }

    /// Dims used by the gradient checks (`--dims small`).
    pub fn small(vocab_size: usize) -> Self {
        Self {
            embed_dim: 6,
            lse_hidden: 4,
            gce_hidden: 3,
            ehe_heads: 2,
            ehe_ffn_mult: 2,
            score_hidden: 8,
            ..Self::new(vocab_size)
        }
    }

    /// Width of sentence and history embeddings (`2 * lse_hidden`).
    pub fn model_dim(&self) -> usize {
        2 * self.lse_hidden
    }

    pub fn global_dim(&self) -> usize {
        2 * self.gce_hidden
    }

    /// Input width of the scoring layer: `[local; global; history]`.
    pub fn score_input_dim(&self) -> usize {
        2 * self.model_dim() + self.global_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidHyperparams(msg));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("lse_hidden", self.lse_hidden),
            ("gce_hidden", self.gce_hidden),
            ("ehe_layers", self.ehe_layers),
            ("ehe_heads", self.ehe_heads),
            ("ehe_ffn_mult", self.ehe_ffn_mult),
            ("score_hidden", self.score_hidden),
            ("n_max", self.n_max),
            ("t_cap", self.t_cap),
            ("l_cap", self.l_cap),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.model_dim() % self.ehe_heads != 0 {
            return bad(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim(),
                self.ehe_heads
            ));
        }
        if !(self.p_stop_threshold > 0.0 && self.p_stop_threshold < 1.0) {
            return bad(format!("p_stop_threshold {} outside (0, 1)", self.p_stop_threshold));
        }
        if self.vocab_size < crate::corpus::SPECIAL_TOKENS.len() {
            return bad("vocab_size smaller than the special tokens".into());
        }
        Ok(())
    }
}
