//! Exact Matching Accuracy with a Parent / Child / Overall breakdown.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{QAInstance, QuestionType};
use crate::policy::{Answer, PredictionRecord};

/// Set equality; the empty set is the "-1" answer.
pub fn exact_match(predicted: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> bool {
    predicted == gold
}

/// Anything carrying a question id and a predicted block set.
pub trait Prediction {
    fn qid(&self) -> &str;
    fn blocks(&self) -> BTreeSet<usize>;
}

impl Prediction for Answer {
    fn qid(&self) -> &str {
        &self.qid
    }
    fn blocks(&self) -> BTreeSet<usize> {
        self.predicted_blocks.clone()
    }
}

impl Prediction for PredictionRecord {
    fn qid(&self) -> &str {
        &self.qid
    }
    fn blocks(&self) -> BTreeSet<usize> {
        PredictionRecord::blocks(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
}

impl Bucket {
    /// `100 * correct / total`, `None` for an empty bucket.
    pub fn percent(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }

    /// Two decimals, or `"n/a"`.
    pub fn percent_text(&self) -> String {
        match self.percent() {
            Some(p) => format!("{p:.2}"),
            None => "n/a".to_string(),
        }
    }

    fn record(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub qid: String,
    pub qtype: QuestionType,
    /// `None` when no prediction was supplied.
    pub predicted: Option<BTreeSet<usize>>,
    pub gold: BTreeSet<usize>,
    pub truncated: bool,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub parent: Bucket,
    pub child: Bucket,
    pub overall: Bucket,
    pub parent_ema: String,
    pub child_ema: String,
    pub overall_ema: String,
    /// Gold answers lost to document truncation; always failures.
    pub truncation_failures: usize,
    pub missing_predictions: usize,
    /// Predictions whose qid is not among the golds; ignored.
    pub unknown_predictions: usize,
    pub verdicts: Vec<Verdict>,
}

impl EvalReport {
    fn from_verdicts(verdicts: Vec<Verdict>, unknown_predictions: usize) -> Self {
        let (mut parent, mut child) = (Bucket::default(), Bucket::default());
        let mut truncation_failures = 0;
        let mut missing_predictions = 0;
        for v in &verdicts {
            match v.qtype {
                QuestionType::Parent => parent.record(v.matched),
                QuestionType::Child => child.record(v.matched),
            }
            truncation_failures += usize::from(v.truncated);
            missing_predictions += usize::from(v.predicted.is_none());
        }
        let overall = Bucket {
            correct: parent.correct + child.correct,
            total: parent.total + child.total,
        };
        Self {
            parent_ema: parent.percent_text(),
            child_ema: child.percent_text(),
            overall_ema: overall.percent_text(),
            parent,
            child,
            overall,
            truncation_failures,
            missing_predictions,
            unknown_predictions,
            verdicts,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, b) in [
            ("Parent", &self.parent),
            ("Child", &self.child),
            ("Overall", &self.overall),
        ] {
            writeln!(f, "{name:<8} {:>7}  ({}/{})", b.percent_text(), b.correct, b.total)?;
        }
        write!(
            f,
            "truncation failures: {}, missing predictions: {}",
            self.truncation_failures, self.missing_predictions
        )
    }
}

/// Scores `predictions` against `golds`. Missing predictions and truncated
/// golds count as failures; a qid predicted twice is an error.
pub fn ema<P: Prediction>(predictions: &[P], golds: &[QAInstance]) -> Result<EvalReport, EvalError> {
    let mut by_qid: HashMap<&str, BTreeSet<usize>> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_qid.insert(p.qid(), p.blocks()).is_some() {
            return Err(EvalError::DuplicatePrediction(p.qid().to_string()));
        }
    }
    let mut used = 0;
    let mut verdicts = Vec::with_capacity(golds.len());
    for g in golds {
        let predicted = by_qid.get(g.question.qid.as_str()).cloned();
        used += usize::from(predicted.is_some());
        let truncated = g.unanswerable_after_truncation;
        let matched = !truncated && predicted.as_ref().is_some_and(|p| exact_match(p, &g.question.answers));
        verdicts.push(Verdict {
            qid: g.question.qid.clone(),
            qtype: g.question.qtype,
            predicted,
            gold: g.question.answers.clone(),
            truncated,
            matched,
        });
    }
    Ok(EvalReport::from_verdicts(verdicts, by_qid.len() - used))
}
