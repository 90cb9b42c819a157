//! Prediction JSONL: `{"qid", "predicted_blocks", "answer"}` per line.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Answer;
use crate::corpus::CorpusError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub qid: String,
    pub predicted_blocks: Vec<usize>,
    /// `"-1"` for no answer, otherwise comma-joined ascending block ids.
    pub answer: String,
}

impl PredictionRecord {
    pub fn blocks(&self) -> BTreeSet<usize> {
        self.predicted_blocks.iter().copied().collect()
    }
}

impl From<&Answer> for PredictionRecord {
    fn from(a: &Answer) -> Self {
        Self {
            qid: a.qid.clone(),
            predicted_blocks: a.predicted_blocks.iter().copied().collect(),
            answer: render_answer(&a.predicted_blocks),
        }
    }
}

pub fn render_answer(blocks: &BTreeSet<usize>) -> String {
    if blocks.is_empty() {
        "-1".to_string()
    } else {
        blocks.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

pub fn write_predictions<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses prediction JSONL; the `answer` rendering must agree with
/// `predicted_blocks`.
pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| CorpusError::Format { line: i + 1, message };
        let rec: PredictionRecord = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if render_answer(&rec.blocks()) != rec.answer {
            return Err(err(format!(
                "answer {:?} disagrees with predicted_blocks {:?}",
                rec.answer, rec.predicted_blocks
            )));
        }
        out.push(rec);
    }
    Ok(out)
}
