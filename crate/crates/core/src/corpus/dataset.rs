//! JSONL dataset interchange: one document with its questions per line.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{tokenize, CorpusError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub id: usize,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Parent,
    Child,
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionType::Parent => f.write_str("parent"),
            QuestionType::Child => f.write_str("child"),
        }
    }
}

/// A question with its gold answer blocks. An empty answer set is the
/// "no answer" (`-1`) case.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub qid: String,
    pub qtype: QuestionType,
    pub text: String,
    pub answers: BTreeSet<usize>,
}

/// A document exactly as read from the file (no truncation applied).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub blocks: Vec<TextBlock>,
    pub questions: Vec<Question>,
}

/// One (document, question) pair ready for encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct QAInstance {
    pub doc_id: String,
    /// Retained blocks (at most `l_cap`), shared between the questions of a document.
    pub blocks: Arc<[TextBlock]>,
    pub question: Question,
    /// Some gold answer pointed at a block dropped by truncation.
    pub unanswerable_after_truncation: bool,
}

impl QAInstance {
    /// Document position of a block id among the retained blocks.
    pub fn position_of(&self, block_id: usize) -> Option<usize> {
        self.blocks.binary_search_by_key(&block_id, |b| b.id).ok()
    }

    /// Gold answers as ascending document positions, skipping any that did
    /// not survive truncation.
    pub fn gold_positions(&self) -> Vec<usize> {
        self.question
            .answers
            .iter()
            .filter_map(|&id| self.position_of(id))
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub documents: Vec<Document>,
}

/// Instances produced from a [`Dataset`] under a block cap.
#[derive(Clone, Debug, Default)]
pub struct Instances {
    pub items: Vec<QAInstance>,
    /// Number of documents that had more than `l_cap` blocks.
    pub truncated_docs: usize,
}

fn format_err(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Format {
        line,
        message: message.into(),
    }
}

fn validate(doc: &Document, line: usize, seen_qids: &mut HashSet<String>) -> Result<(), CorpusError> {
    if doc.blocks.is_empty() {
        return Err(format_err(line, format!("document {} has no blocks", doc.doc_id)));
    }
    for pair in doc.blocks.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(format_err(line, format!("duplicate block id {}", pair[1].id)));
        }
        if pair[0].id > pair[1].id {
            return Err(format_err(
                line,
                format!("block ids not ascending: {} after {}", pair[1].id, pair[0].id),
            ));
        }
    }
    for block in &doc.blocks {
        if tokenize(&block.text).is_empty() {
            return Err(format_err(line, format!("block {} has no tokens", block.id)));
        }
    }
    for q in &doc.questions {
        if !seen_qids.insert(q.qid.clone()) {
            return Err(format_err(line, format!("duplicate question id {}", q.qid)));
        }
        if tokenize(&q.text).is_empty() {
            return Err(format_err(line, format!("question {} has no tokens", q.qid)));
        }
        for &a in &q.answers {
            if doc.blocks.binary_search_by_key(&a, |b| b.id).is_err() {
                return Err(format_err(
                    line,
                    format!("question {} answers missing block {a}", q.qid),
                ));
            }
        }
    }
    Ok(())
}

impl Dataset {
    /// Parses JSONL text. Line numbers in errors are 1-based; blank lines are skipped.
    pub fn parse_str(text: &str) -> Result<Self, CorpusError> {
        let mut documents = Vec::new();
        let mut seen_qids = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(raw).map_err(|e| format_err(line, e.to_string()))?;
            validate(&doc, line, &mut seen_qids)?;
            documents.push(doc);
        }
        Ok(Self { documents })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("documents serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn question_count(&self) -> usize {
        self.documents.iter().map(|d| d.questions.len()).sum()
    }

    /// Fans documents out into one instance per question, keeping the first
    /// `l_cap` blocks of each document.
    pub fn instances(&self, l_cap: usize) -> Instances {
        let mut out = Instances::default();
        for doc in &self.documents {
            let truncated = doc.blocks.len() > l_cap;
            if truncated {
                out.truncated_docs += 1;
            }
            let kept: Arc<[TextBlock]> = doc.blocks.iter().take(l_cap).cloned().collect();
            let last_kept = kept.last().map(|b| b.id);
            for q in &doc.questions {
                let lost = truncated && q.answers.iter().any(|&a| Some(a) > last_kept);
                out.items.push(QAInstance {
                    doc_id: doc.doc_id.clone(),
                    blocks: Arc::clone(&kept),
                    question: q.clone(),
                    unanswerable_after_truncation: lost,
                });
            }
        }
        out
    }
}

/// Reads a dataset file and fans it out into instances under `l_cap`.
pub fn parse_dataset(path: impl AsRef<Path>, l_cap: usize) -> Result<Instances, CorpusError> {
    Ok(Dataset::load(path)?.instances(l_cap))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_line(blocks: &[(usize, &str)], questions: &str) -> String {
        let blocks: Vec<String> = blocks
            .iter()
            .map(|(id, t)| format!(r#"{{"id":{id},"text":"{t}"}}"#))
            .collect();
        format!(
            r#"{{"doc_id":"d","blocks":[{}],"questions":[{questions}]}}"#,
            blocks.join(",")
        )
    }

    #[test]
    fn fans_out_questions() {
        let line = doc_line(
            &[(0, "Results"), (1, "see fig 2"), (2, "Methods")],
            r#"{"qid":"a","qtype":"parent","text":"which section?","answers":[0]},
               {"qid":"b","qtype":"child","text":"which?","answers":[]},
               {"qid":"c","qtype":"child","text":"what?","answers":[1,2]}"#,
        )
        .replace('\n', " ");
        let ds = Dataset::parse_str(&line).unwrap();
        let inst = ds.instances(512);
        assert_eq!(inst.items.len(), 3);
        assert!(Arc::ptr_eq(&inst.items[0].blocks, &inst.items[2].blocks));
        assert_eq!(inst.truncated_docs, 0);
    }

    #[test]
    fn rejects_answer_to_missing_block() {
        let line = doc_line(
            &[(0, "a"), (1, "b")],
            r#"{"qid":"a","qtype":"parent","text":"q","answers":[5]}"#,
        );
        let text = format!("\n{line}");
        match Dataset::parse_str(&text) {
            Err(CorpusError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_and_unsorted_ids() {
        let dup = doc_line(&[(0, "a"), (0, "b")], "");
        assert!(matches!(
            Dataset::parse_str(&dup),
            Err(CorpusError::Format { line: 1, .. })
        ));
        let unsorted = doc_line(&[(3, "a"), (1, "b")], "");
        assert!(Dataset::parse_str(&unsorted).is_err());
        let empty_text = doc_line(&[(0, "  ")], "");
        assert!(Dataset::parse_str(&empty_text).is_err());
        assert!(Dataset::parse_str("{not json").is_err());
        let bad_type = doc_line(&[(0, "a")], r#"{"qid":"a","qtype":"sibling","text":"q","answers":[]}"#);
        assert!(Dataset::parse_str(&bad_type).is_err());
    }

    #[test]
    fn truncation_flags_lost_answers() {
        let l_cap = 4;
        let blocks: Vec<(usize, String)> = (0..l_cap + 10).map(|i| (i, format!("block {i}"))).collect();
        let refs: Vec<(usize, &str)> = blocks.iter().map(|(i, t)| (*i, t.as_str())).collect();
        let line = doc_line(
            &refs,
            &format!(
                r#"{{"qid":"lost","qtype":"child","text":"q","answers":[{}]}},{{"qid":"kept","qtype":"child","text":"q","answers":[1]}}"#,
                l_cap + 1
            ),
        );
        let ds = Dataset::parse_str(&line).unwrap();
        let inst = ds.instances(l_cap);
        assert_eq!(inst.truncated_docs, 1);
        assert_eq!(inst.items[0].blocks.len(), l_cap);
        assert!(inst.items[0].unanswerable_after_truncation);
        assert!(!inst.items[1].unanswerable_after_truncation);
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let line = doc_line(
            &[(2, "Intro"), (5, "text with fig 1")],
            r#"{"qid":"x","qtype":"child","text":"which?","answers":[5,2]}"#,
        );
        let ds = Dataset::parse_str(&line).unwrap();
        let again = Dataset::parse_str(&ds.to_jsonl()).unwrap();
        assert_eq!(ds, again);
        assert_eq!(ds.to_jsonl(), again.to_jsonl());
    }
}
