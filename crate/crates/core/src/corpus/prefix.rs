//! Question prefixing: every block becomes `[type] question <sep> block`.

use super::{tokenize, CorpusError, QAInstance, Question, QuestionType, TextBlock, Vocabulary};
use super::{QTYPE_CHILD, QTYPE_PARENT, SEP};

/// Maximum tokens per prefixed sentence.
pub const T_CAP: usize = 64;
/// Maximum blocks per document.
pub const L_CAP: usize = 512;
/// Maximum question tokens kept in a prefix.
pub const QUESTION_CAP: usize = 32;

/// Token ids of one prefixed block, the unit the sentence encoder reads.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PrefixedSentence {
    pub token_ids: Vec<usize>,
    pub block_id: usize,
}

impl PrefixedSentence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

fn type_marker(qtype: QuestionType) -> usize {
    match qtype {
        QuestionType::Parent => QTYPE_PARENT,
        QuestionType::Child => QTYPE_CHILD,
    }
}

fn question_prefix(question: &Question, vocab: &Vocabulary, t_cap: usize) -> Result<Vec<usize>, CorpusError> {
    let q_tokens = tokenize(&question.text);
    let kept = q_tokens.len().min(QUESTION_CAP);
    if t_cap < 2 + kept {
        return Err(CorpusError::PrefixCap {
            t_cap,
            needed: 2 + kept,
        });
    }
    let mut ids = Vec::with_capacity(t_cap);
    ids.push(type_marker(question.qtype));
    ids.extend(q_tokens[..kept].iter().map(|t| vocab.id(t)));
    ids.push(SEP);
    Ok(ids)
}

fn append_block(prefix: &[usize], block: &TextBlock, vocab: &Vocabulary, t_cap: usize) -> PrefixedSentence {
    let mut ids = prefix.to_vec();
    let room = t_cap - prefix.len();
    ids.extend(tokenize(&block.text).iter().take(room).map(|t| vocab.id(t)));
    PrefixedSentence {
        token_ids: ids,
        block_id: block.id,
    }
}

/// `[type marker] ++ question ids (first 32) ++ [SEP] ++ block ids`, cut to `t_cap`.
/// Out-of-vocabulary tokens become UNK.
pub fn prefix_block(
    question: &Question,
    block: &TextBlock,
    vocab: &Vocabulary,
    t_cap: usize,
) -> Result<PrefixedSentence, CorpusError> {
    let prefix = question_prefix(question, vocab, t_cap)?;
    Ok(append_block(&prefix, block, vocab, t_cap))
}

/// One prefixed sentence per retained block, in block order.
pub fn encode_instance(
    instance: &QAInstance,
    vocab: &Vocabulary,
    t_cap: usize,
    l_cap: usize,
) -> Result<Vec<PrefixedSentence>, CorpusError> {
    let prefix = question_prefix(&instance.question, vocab, t_cap)?;
    Ok(instance
        .blocks
        .iter()
        .take(l_cap)
        .map(|b| append_block(&prefix, b, vocab, t_cap))
        .collect())
}
