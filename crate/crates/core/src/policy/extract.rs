//! The sequential, non-repetitive selection loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::heads::{encode_document, policy_step, DocumentEncoding};
use crate::autodiff::{masked_softmax_row, Scalar, Tape};
use crate::corpus::{encode_instance, QAInstance, Vocabulary};
use crate::encoders::{Hyperparams, ModelError, ModelParams, ModelVars};

/// Loop state over document positions `0..len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractionState {
    extracted: Vec<usize>,
    remaining: Vec<usize>,
    stopped: bool,
}

impl ExtractionState {
    pub fn new(len: usize) -> Self {
        Self {
            extracted: Vec::new(),
            remaining: (0..len).collect(),
            stopped: false,
        }
    }

    /// State after extracting `prefix` in order. Panics on repeats or
    /// out-of-range positions.
    pub fn with_prefix(len: usize, prefix: &[usize]) -> Self {
        let mut s = Self::new(len);
        for &p in prefix {
            s.take(p);
        }
        s
    }

    /// Extraction order.
    pub fn extracted(&self) -> &[usize] {
        &self.extracted
    }

    /// Ascending.
    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn step(&self) -> usize {
        self.extracted.len()
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    pub fn doc_len(&self) -> usize {
        self.extracted.len() + self.remaining.len()
    }

    fn take(&mut self, pos: usize) {
        let at = self
            .remaining
            .binary_search(&pos)
            .unwrap_or_else(|_| panic!("position {pos} is not remaining"));
        self.remaining.remove(at);
        self.extracted.push(pos);
    }
}

/// What one scorer call reports for the remaining sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct StepScores {
    /// One logit per entry of `state.remaining()`, same order.
    pub logits: Vec<f64>,
    pub p_stop: f64,
}

/// Anything that can score a selection step.
pub trait StepScorer {
    fn score(&mut self, state: &ExtractionState) -> Result<StepScores, ModelError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    /// Probability per document position; extracted positions hold exactly 0.
    pub p_extraction: Vec<f64>,
    pub p_stop: f64,
    /// Position selected at this step; `None` when the loop stopped here.
    pub chosen: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionOutcome {
    pub state: ExtractionState,
    pub trace: Vec<StepDecision>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub n_max: usize,
    pub p_stop_threshold: f64,
}

impl From<&Hyperparams> for DecodeConfig {
    fn from(hp: &Hyperparams) -> Self {
        Self {
            n_max: hp.n_max,
            p_stop_threshold: hp.p_stop_threshold,
        }
    }
}

/// Check-then-select: at each step, stop if `p_stop > threshold`, otherwise
/// take the most probable remaining position (lowest index on ties). Ends
/// after `n_max` selections or when nothing remains.
pub fn run_extraction<S: StepScorer>(
    scorer: &mut S,
    doc_len: usize,
    cfg: DecodeConfig,
) -> Result<ExtractionOutcome, ModelError> {
    let mut state = ExtractionState::new(doc_len);
    let mut trace = Vec::new();
    while !state.remaining.is_empty() && state.extracted.len() < cfg.n_max {
        let scores = scorer.score(&state)?;
        if scores.logits.len() != state.remaining.len() {
            return Err(ModelError::Alignment(format!(
                "scorer returned {} logits for {} remaining sentences",
                scores.logits.len(),
                state.remaining.len()
            )));
        }
        let probs =
            masked_softmax_row(&scores.logits, &vec![true; scores.logits.len()]).ok_or(ModelError::NoRemaining)?;
        let mut p_extraction = vec![0.0; doc_len];
        for (&pos, &p) in state.remaining.iter().zip(&probs) {
            p_extraction[pos] = p;
        }
        if scores.p_stop > cfg.p_stop_threshold {
            state.stopped = true;
            trace.push(StepDecision {
                p_extraction,
                p_stop: scores.p_stop,
                chosen: None,
            });
            break;
        }
        let mut best = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        let chosen = state.remaining[best];
        state.take(chosen);
        trace.push(StepDecision {
            p_extraction,
            p_stop: scores.p_stop,
            chosen: Some(chosen),
        });
    }
    Ok(ExtractionOutcome { state, trace })
}

/// The neural policy over one encoded document. Inference only.
pub struct ModelScorer<'a, T: Scalar> {
    tape: Tape<T>,
    mv: ModelVars,
    hp: &'a Hyperparams,
    enc: DocumentEncoding,
    base_len: usize,
    calls: usize,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(
        params: &ModelParams<T>,
        hp: &'a Hyperparams,
        sentences: &[crate::corpus::PrefixedSentence],
    ) -> Result<Self, ModelError> {
        let mut tape = Tape::new();
        let mv = ModelVars::bind_frozen(&mut tape, params, hp)?;
        let enc = encode_document(&mut tape, &mv, hp, sentences)?;
        let base_len = tape.len();
        Ok(Self {
            tape,
            mv,
            hp,
            enc,
            base_len,
            calls: 0,
        })
    }

    pub fn doc_len(&self) -> usize {
        self.enc.len
    }

    /// Number of history-encoder runs so far.
    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn score(&mut self, state: &ExtractionState) -> Result<StepScores, ModelError> {
        // Local/global encodings stay; per-step nodes are rebuilt each call.
        self.tape.truncate(self.base_len);
        self.calls += 1;
        let out = policy_step(
            &mut self.tape,
            &self.mv,
            self.hp,
            &self.enc,
            state.remaining(),
            state.extracted(),
        )?;
        let logits = self.tape.value(out.logits).data().iter().map(|x| x.as_f64()).collect();
        let p_stop = self.tape.value(out.p_stop).item().as_f64();
        Ok(StepScores { logits, p_stop })
    }
}

/// Predicted answer for one question. Block ids, not positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Answer {
    pub qid: String,
    pub predicted_blocks: BTreeSet<usize>,
    pub trace: Vec<StepDecision>,
}

/// Runs the full policy on one instance.
pub fn extract<T: Scalar>(
    instance: &QAInstance,
    params: &ModelParams<T>,
    hp: &Hyperparams,
    vocab: &Vocabulary,
) -> Result<Answer, ModelError> {
    let sentences =
        encode_instance(instance, vocab, hp.t_cap, hp.l_cap).map_err(|e| ModelError::Encoding(e.to_string()))?;
    let mut scorer = ModelScorer::new(params, hp, &sentences)?;
    let outcome = run_extraction(&mut scorer, sentences.len(), hp.into())?;
    let predicted_blocks = outcome
        .state
        .extracted()
        .iter()
        .map(|&pos| sentences[pos].block_id)
        .collect();
    Ok(Answer {
        qid: instance.question.qid.clone(),
        predicted_blocks,
        trace: outcome.trace,
    })
}
