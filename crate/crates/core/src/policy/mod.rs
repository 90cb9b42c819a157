//! Scoring heads and the extraction loop that turns scores into answers.

mod extract;
mod heads;
mod output;

pub use extract::{
    extract, run_extraction, Answer, DecodeConfig, ExtractionOutcome, ExtractionState, ModelScorer, StepDecision,
    StepScorer, StepScores,
};
pub use heads::{
    encode_document, policy_step, score_remaining, stop_prob, DocumentEncoding, ScoreOutputs, StepOutputs,
};
pub use output::{read_predictions, render_answer, write_predictions, PredictionRecord};
