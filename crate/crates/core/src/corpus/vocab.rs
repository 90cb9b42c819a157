use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{tokenize, CorpusError, QAInstance};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const QTYPE_PARENT: usize = 3;
pub const QTYPE_CHILD: usize = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<sep>", "<parent>", "<child>"];

/// Token/id mapping. Ids are contiguous; the five special tokens hold ids 0..=4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if i < SPECIAL_TOKENS.len() && t != SPECIAL_TOKENS[i] {
                return Err(CorpusError::Vocab(format!(
                    "line {}: expected special token {}, found {t}",
                    i + 1,
                    SPECIAL_TOKENS[i]
                )));
            }
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CorpusError::Vocab(format!("line {}: invalid token {t:?}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Vocab(format!("line {}: duplicate token {t}", i + 1)));
            }
        }
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(CorpusError::Vocab("missing special tokens".into()));
        }
        Ok(Self {
            tokens,
            index,
            min_freq,
        })
    }

    /// Counts every token of block and question texts (each document's blocks
    /// once, however many questions share it) and keeps those seen at least
    /// `min_freq` times, most frequent first, ties in lexicographic order.
    pub fn build(corpus: &[QAInstance], min_freq: usize) -> Result<Self, CorpusError> {
        let min_freq = min_freq.max(1);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut seen_docs = HashSet::new();
        for inst in corpus {
            if seen_docs.insert(inst.doc_id.as_str()) {
                for block in inst.blocks.iter() {
                    for tok in tokenize(&block.text) {
                        *counts.entry(tok).or_default() += 1;
                    }
                }
            }
            for tok in tokenize(&inst.question.text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens, min_freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// File form: token with id `k` on line `k + 1`.
    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    /// Loaded vocabularies report `min_freq = 1`; the file does not store it.
    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let tokens = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens, 1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// SHA-256 of the file form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
