//! Sentence, document and extraction-history encoders.

mod global;
mod history;
mod hyper;
mod local;
mod lstm;
mod params;

pub use global::gce_forward;
pub use history::{decoder_layer, ehe_forward, multi_head_attention};
pub use hyper::Hyperparams;
pub use local::{lse_forward, lse_forward_batch};
pub use lstm::{lstm_cell, project_inputs, run_direction};
pub use params::{
    param_layout, AttentionVars, BiLstmVars, DecoderLayerVars, Init, LstmVars, ModelParams, ModelVars, NormVars,
    ParamSpec,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("document has no sentences")]
    EmptyDocument,
    #[error("no remaining sentences to score")]
    NoRemaining,
    #[error("sentence of {len} tokens exceeds t_cap {t_cap}")]
    SentenceTooLong { len: usize, t_cap: usize },
    #[error("document of {len} sentences exceeds l_cap {l_cap}")]
    DocumentTooLong { len: usize, l_cap: usize },
    #[error("cannot encode instance: {0}")]
    Encoding(String),
    #[error("misaligned inputs: {0}")]
    Alignment(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
}
