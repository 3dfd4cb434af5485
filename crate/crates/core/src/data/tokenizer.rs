//! Word-level tokenizer: lowercase, split into alphanumeric runs and single
//! punctuation marks.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::data::prefix::{TaskKind, PREFIX_SEPARATOR};
use crate::encoder::pad_vocab;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Ids eligible for masking and random replacement: `first_regular..raw_vocab`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskingVocab {
    pub mask_id: u32,
    pub first_regular: u32,
    pub raw_vocab: u32,
}

impl MaskingVocab {
    pub fn is_maskable(&self, id: u32) -> bool {
        id >= self.first_regular && id < self.raw_vocab
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercased word and punctuation pieces of `text`.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if is_word_char(c) {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Canonical form that `decode(encode(text))` reproduces for in-vocabulary text.
pub fn normalize(text: &str) -> String {
    split_words(text).join(" ")
}

impl Tokenizer {
    /// Vocabulary of the `max_vocab` most frequent pieces (ties broken
    /// alphabetically) seen at least `min_count` times. Special tokens and
    /// the task-prefix pieces are always present and count toward the cap.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_vocab: usize,
        min_count: usize,
    ) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for kind in TaskKind::ALL {
            tokens.extend(split_words(kind.prefix()));
        }
        tokens.extend(split_words(PREFIX_SEPARATOR));
        if max_vocab < tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "max_vocab {max_vocab} below {} reserved tokens",
                tokens.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !tokens.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_vocab - tokens.len();
        tokens.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        Self::from_tokens(tokens)
    }

    /// Vocabulary in id order; the special tokens must come first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(Error::InvalidArgument(format!(
                "vocabulary must start with {SPECIAL_TOKENS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn raw_vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn padded_vocab_size(&self) -> usize {
        pad_vocab(self.tokens.len())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Regular (non-special) tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }

    pub fn masking_vocab(&self) -> MaskingVocab {
        MaskingVocab {
            mask_id: MASK_ID,
            first_regular: SPECIAL_TOKENS.len() as u32,
            raw_vocab: self.tokens.len() as u32,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect()
    }

    /// `[CLS] tokens [SEP]`, truncating the tokens so the total is at most `max_tokens`.
    pub fn encode_for_model(&self, text: &str, max_tokens: usize) -> Vec<u32> {
        let body = self.encode(text);
        let keep = max_tokens.saturating_sub(2).min(body.len());
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(CLS_ID);
        ids.extend_from_slice(&body[..keep]);
        if max_tokens >= 2 {
            ids.push(SEP_ID);
        }
        ids
    }

    /// Space-joined tokens, skipping padding, `[CLS]`, `[SEP]` and `[MASK]`.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD_ID | CLS_ID | SEP_ID | MASK_ID))
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK_ID as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::build(["The cat sat.", "the dog sat, again!"], 100, 1).unwrap()
    }

    #[test]
    fn splitting() {
        assert_eq!(split_words("Hello, World!"), ["hello", ",", "world", "!"]);
        assert_eq!(
            split_words("search_query: Is  it?"),
            ["search_query", ":", "is", "it", "?"]
        );
    }

    #[test]
    fn round_trip_in_vocab() {
        let t = tok();
        let text = "The dog sat, again!";
        assert_eq!(t.decode(&t.encode(text)), normalize(text));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let t = tok();
        assert_eq!(t.encode("zebra"), vec![UNK_ID]);
    }

    #[test]
    fn reserved_tokens_present_and_vocab_padded() {
        let t = tok();
        for kind in TaskKind::ALL {
            assert!(t.id(kind.prefix()).is_some());
        }
        assert!(t.id(":").is_some());
        assert_eq!(t.padded_vocab_size() % 64, 0);
        assert!(t.padded_vocab_size() >= t.raw_vocab_size());
    }

    #[test]
    fn cap_respected_and_frequency_ordered() {
        let t = Tokenizer::build(["a a a b b c"], 12, 1).unwrap();
        assert_eq!(t.raw_vocab_size(), 12);
        assert_eq!(t.regular_tokens().last().unwrap(), "b");
    }

    #[test]
    fn model_encoding_truncates() {
        let t = tok();
        let ids = t.encode_for_model("the cat sat the dog", 4);
        assert_eq!(ids.len(), 4);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(ids[3], SEP_ID);
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let t = tok();
        t.save(&p).unwrap();
        assert_eq!(Tokenizer::load(&p).unwrap(), t);
    }

    #[test]
    fn rejects_missing_specials() {
        assert!(Tokenizer::from_tokens(vec!["a".into()]).is_err());
    }
}
