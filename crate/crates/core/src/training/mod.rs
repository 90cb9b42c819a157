//! Supervised imitation of gold extraction sequences.

mod adam;
mod checkpoint;
mod config;
mod gold;
mod loss;
mod trainer;

pub use adam::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainingMeta, FORMAT_VERSION};
pub use config::TrainConfig;
pub use gold::{gold_sequence, GoldSequence, GoldStep};
pub use loss::{instance_loss, step_loss, PROB_FLOOR};
pub use trainer::{instance_gradients, train, train_with_progress, EpochStats, TrainOutcome};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::corpus::CorpusError;
use crate::encoders::ModelError;
use crate::eval::EvalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gold action {0} is not among the remaining sentences")]
    ActionNotRemaining(usize),
    #[error("instance has no gold steps")]
    NoGoldSteps,
    #[error("non-finite loss on question {qid}")]
    NonFiniteLoss { qid: String },
    #[error("training or validation set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        Self::Model(e.into())
    }
}
