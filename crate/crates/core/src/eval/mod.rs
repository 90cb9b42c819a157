//! Exact-match evaluation and the synthetic acceptance corpus.

mod metrics;
mod synthetic;

pub use metrics::{ema, exact_match, Bucket, EvalReport, Prediction, Verdict};
pub use synthetic::{
    child_question, gen_synthetic, gen_synthetic_range, marker, parent_question, synthetic_document, MARKERS,
    MIN_BLOCKS, QUESTIONS_PER_DOC,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("question {0} has more than one prediction")]
    DuplicatePrediction(String),
    #[error("{0}")]
    InvalidArgument(String),
}
