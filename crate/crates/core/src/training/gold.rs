//! Teacher-forcing targets derived from gold answer sets.

use crate::corpus::QAInstance;
use crate::policy::ExtractionState;

#[derive(Clone, Debug, PartialEq)]
pub struct GoldStep {
    pub state: ExtractionState,
    /// Document position to extract; `None` at the terminal step.
    pub action: Option<usize>,
    pub stop_label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoldSequence {
    pub steps: Vec<GoldStep>,
    /// The gold set had more than `n_max` blocks and was cut.
    pub overflowed: bool,
}

/// Actions in ascending block order (at most `n_max`), then one stop step.
pub fn gold_sequence(instance: &QAInstance, n_max: usize) -> GoldSequence {
    let len = instance.blocks.len();
    let mut gold = instance.gold_positions();
    let overflowed = gold.len() > n_max;
    gold.truncate(n_max);
    let mut steps = Vec::with_capacity(gold.len() + 1);
    for (k, &action) in gold.iter().enumerate() {
        steps.push(GoldStep {
            state: ExtractionState::with_prefix(len, &gold[..k]),
            action: Some(action),
            stop_label: 0,
        });
    }
    steps.push(GoldStep {
        state: ExtractionState::with_prefix(len, &gold),
        action: None,
        stop_label: 1,
    });
    GoldSequence { steps, overflowed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Question, QuestionType, TextBlock};

    fn instance(n_blocks: usize, answers: &[usize]) -> QAInstance {
        QAInstance {
            doc_id: "d".into(),
            blocks: (0..n_blocks)
                .map(|i| TextBlock {
                    id: 10 + i,
                    text: "t".into(),
                })
                .collect::<Vec<_>>()
                .into(),
            question: Question {
                qid: "q".into(),
                qtype: QuestionType::Child,
                text: "q".into(),
                answers: answers.iter().copied().collect(),
            },
            unanswerable_after_truncation: false,
        }
    }

    #[test]
    fn ascending_actions_then_stop() {
        let g = gold_sequence(&instance(9, &[17, 13]), 4);
        let actions: Vec<_> = g.steps.iter().map(|s| s.action).collect();
        assert_eq!(actions, [Some(3), Some(7), None]);
        assert_eq!(g.steps.iter().map(|s| s.stop_label).collect::<Vec<_>>(), [0, 0, 1]);
        assert_eq!(g.steps[1].state.extracted(), &[3]);
        assert_eq!(g.steps[2].state.extracted(), &[3, 7]);
        assert!(!g.overflowed);
    }

    #[test]
    fn empty_answer_is_a_single_stop() {
        let g = gold_sequence(&instance(3, &[]), 4);
        assert_eq!(g.steps.len(), 1);
        assert_eq!((g.steps[0].action, g.steps[0].stop_label), (None, 1));
    }

    #[test]
    fn overflow_is_cut_at_n_max() {
        let g = gold_sequence(&instance(8, &[11, 12, 13, 14, 15]), 4);
        let actions: Vec<_> = g.steps.iter().filter_map(|s| s.action).collect();
        assert_eq!(actions, [1, 2, 3, 4]);
        assert!(g.overflowed);
    }
}
