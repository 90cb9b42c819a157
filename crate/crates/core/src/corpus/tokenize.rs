//! Lowercasing whitespace tokenizer with punctuation splitting.

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercases, splits on whitespace, then peels a leading and a trailing run
/// of punctuation off each word as separate tokens.
///
/// ```
/// use memsum_dqa::corpus::tokenize;
/// assert_eq!(tokenize("Fig 2?"), vec!["fig", "2", "?"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let core_start = word.find(|c: char| !is_punct(c));
        let Some(start) = core_start else {
            out.push(word);
            continue;
        };
        let end = word
            .char_indices()
            .rev()
            .find(|&(_, c)| !is_punct(c))
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(word.len());
        if start > 0 {
            out.push(word[..start].to_string());
        }
        out.push(word[start..end].to_string());
        if end < word.len() {
            out.push(word[end..].to_string());
        }
    }
    out
}
