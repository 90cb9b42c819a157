//! Dataset ingestion, tokenization, vocabulary and question prefixing.

mod dataset;
mod prefix;
mod tokenize;
mod vocab;

pub use dataset::{parse_dataset, Dataset, Document, Instances, QAInstance, Question, QuestionType, TextBlock};
pub use prefix::{encode_instance, prefix_block, PrefixedSentence, L_CAP, QUESTION_CAP, T_CAP};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD, QTYPE_CHILD, QTYPE_PARENT, SEP, SPECIAL_TOKENS, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("t_cap {t_cap} cannot hold a prefix of {needed} tokens")]
    PrefixCap { t_cap: usize, needed: usize },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
