//! Rule-based corpus whose answers are decidable from surface tokens.
//!
//! A document is a run of sections; each starts with a `section <title>`
//! header followed by content blocks of filler words. Some content blocks
//! carry one marker token (`fig1` ... `fig4`). Child questions ask for every
//! block carrying a marker, parent questions for the header of the section
//! holding the single block with a marker. Every tenth question asks about a
//! marker absent from the document and has no answer.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::corpus::{Dataset, Document, Question, QuestionType, TextBlock};

pub const MIN_BLOCKS: usize = 6;
pub const MARKERS: usize = 4;
/// Child, parent, child, parent.
pub const QUESTIONS_PER_DOC: usize = 4;
const MAX_CHILD_BLOCKS: usize = 4;

const TITLES: [&str; 10] = [
    "introduction",
    "background",
    "methods",
    "data",
    "results",
    "analysis",
    "evaluation",
    "discussion",
    "conclusion",
    "appendix",
];

const FILLER: [&str; 24] = [
    "the",
    "model",
    "shows",
    "an",
    "increase",
    "in",
    "values",
    "across",
    "all",
    "runs",
    "we",
    "observe",
    "a",
    "small",
    "effect",
    "for",
    "each",
    "group",
    "data",
    "was",
    "collected",
    "over",
    "time",
    "and",
];

pub fn marker(k: usize) -> String {
    format!("fig{}", k + 1)
}

pub fn child_question(key: &str) -> String {
    format!("which blocks mention {key} ?")
}

pub fn parent_question(key: &str) -> String {
    format!("which section mentions {key} ?")
}

fn section_sizes(rng: &mut ChaCha8Rng, blocks: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = blocks;
    while left > 0 {
        let size = if left <= 5 {
            left
        } else {
            let s = rng.gen_range(3..=5);
            if left - s < 3 {
                left - 3
            } else {
                s
            }
        };
        sizes.push(size);
        left -= size;
    }
    sizes
}

fn filler(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.gen_range(4..=7);
    (0..n)
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
        .collect()
}

/// Document `index` of the corpus for `seed`; each document draws from its
/// own stream, so any range of indices can be generated independently.
pub fn synthetic_document(seed: u64, index: u64, blocks: usize) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let sizes = section_sizes(&mut rng, blocks);

    let mut titles: Vec<&str> = TITLES.to_vec();
    titles.shuffle(&mut rng);
    let mut texts: Vec<Vec<String>> = Vec::with_capacity(blocks);
    let mut section_of = Vec::with_capacity(blocks);
    let mut headers = Vec::new();
    let mut content = Vec::new();
    for (s, &size) in sizes.iter().enumerate() {
        headers.push(texts.len());
        section_of.push(s);
        texts.push(vec!["section".into(), titles[s % titles.len()].into()]);
        for _ in 1..size {
            content.push(texts.len());
            section_of.push(s);
            texts.push(filler(&mut rng));
        }
    }

    let mut keys: Vec<usize> = (0..MARKERS).collect();
    keys.shuffle(&mut rng);
    let mut slots = content.clone();
    slots.shuffle(&mut rng);
    let mut next_slot = 0;

    let mut questions = Vec::with_capacity(QUESTIONS_PER_DOC);
    let mut next_key = 0;
    let mut child_blocks = [0usize; QUESTIONS_PER_DOC];
    let mut budget = content.len();
    for (q, cb) in child_blocks.iter_mut().enumerate() {
        let slots_for_rest = QUESTIONS_PER_DOC - q - 1;
        *cb = if q % 2 == 0 {
            rng.gen_range(1..=MAX_CHILD_BLOCKS).min(budget - slots_for_rest)
        } else {
            1
        };
        budget -= *cb;
    }
    for (q, &count) in child_blocks.iter().enumerate() {
        let global = index as usize * QUESTIONS_PER_DOC + q;
        let qtype = if q % 2 == 0 {
            QuestionType::Child
        } else {
            QuestionType::Parent
        };
        let key = marker(keys[next_key]);
        next_key += 1;
        let mut answers = BTreeSet::new();
        if global % 10 != 9 {
            let placed = &slots[next_slot..next_slot + count];
            next_slot += count;
            for &b in placed {
                let at = rng.gen_range(0..=texts[b].len());
                texts[b].insert(at, key.clone());
            }
            match qtype {
                QuestionType::Child => answers.extend(placed.iter().copied()),
                QuestionType::Parent => {
                    answers.insert(headers[section_of[placed[0]]]);
                }
            }
        }
        let text = match qtype {
            QuestionType::Child => child_question(&key),
            QuestionType::Parent => parent_question(&key),
        };
        questions.push(Question {
            qid: format!("syn{seed}-{index}-q{q}"),
            qtype,
            text,
            answers,
        });
    }

    // Distractor markers on some unused content blocks.
    for &b in &slots[next_slot..] {
        if rng.gen_bool(0.5) && next_key < MARKERS {
            let at = rng.gen_range(0..=texts[b].len());
            texts[b].insert(at, marker(keys[next_key]));
            next_key += 1;
        }
    }

    Document {
        doc_id: format!("syn{seed}-{index}"),
        blocks: texts
            .into_iter()
            .enumerate()
            .map(|(id, words)| TextBlock {
                id,
                text: words.join(" "),
            })
            .collect(),
        questions,
    }
}

/// Documents `first .. first + n_docs` of the corpus for `seed`.
pub fn gen_synthetic_range(first: u64, n_docs: usize, blocks_per_doc: usize, seed: u64) -> Result<Dataset, EvalError> {
    if blocks_per_doc < MIN_BLOCKS {
        return Err(EvalError::InvalidArgument(format!(
            "blocks_per_doc must be at least {MIN_BLOCKS}, got {blocks_per_doc}"
        )));
    }
    Ok(Dataset {
        documents: (first..first + n_docs as u64)
            .map(|i| synthetic_document(seed, i, blocks_per_doc))
            .collect(),
    })
}

pub fn gen_synthetic(n_docs: usize, blocks_per_doc: usize, seed: u64) -> Result<Dataset, EvalError> {
    gen_synthetic_range(0, n_docs, blocks_per_doc, seed)
}
