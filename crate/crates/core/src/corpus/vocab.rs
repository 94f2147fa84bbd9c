use std::collections::HashMap;
use std::path::Path;

use super::sample::DialogSample;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const MASK: usize = 3;
pub const BOU: usize = 4;
pub const EOU: usize = 5;
pub const BOS: usize = 6;
pub const EOS: usize = 7;

pub const RESERVED: [&str; 8] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]", "[BOU]", "[EOU]", "[BOS]", "[EOS]"];

/// Lower-cases and splits on whitespace; punctuation characters become
/// tokens of their own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '_' || ch == '\'' {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Token ↔ id map with the eight reserved tokens at ids `0..8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut ids = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if ids.insert(tok.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{tok}`")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of non-reserved entries.
    pub fn word_count(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// One non-reserved token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens[RESERVED.len()..] {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_words(text.lines().filter(|l| !l.is_empty()).map(str::to_owned))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Builds a vocabulary from every turn of `samples`, keeping tokens seen at
/// least `min_freq` times, ordered by frequency then lexicographically.
pub fn build_vocab(samples: &[DialogSample], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for turn in samples.iter().flat_map(|s| &s.turns) {
        for tok in tokenize(&turn.text) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(tok, c)| *c >= min_freq && !RESERVED.contains(&tok.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(t, _)| t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sample::Turn;

    fn corpus(texts: &[&str]) -> Vec<DialogSample> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| DialogSample {
                dialog_id: i.to_string(),
                source: "t".into(),
                turns: vec![Turn::user(*t)],
                annotation: None,
            })
            .collect()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Book a table, for 7pm!"), vec!["book", "a", "table", ",", "for", "7pm", "!"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn min_freq_filters() {
        let c = corpus(&["book a table"]);
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.word_count(), 3);
        assert_eq!(v.len(), 11);
        let v2 = build_vocab(&c, 2).unwrap();
        assert_eq!(v2.word_count(), 0);
        assert_eq!(v2.encode_text("book a table"), vec![UNK, UNK, UNK]);
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = build_vocab(&corpus(&["b a c a", "c d"]), 1).unwrap();
        let words: Vec<&str> = (8..v.len()).map(|i| v.token(i).unwrap()).collect();
        assert_eq!(words, vec!["a", "c", "b", "d"]);
        assert_eq!(build_vocab(&corpus(&["b a c a", "c d"]), 1).unwrap(), v);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_vocab(&[], 1), Err(Error::Config(_))));
        assert!(matches!(build_vocab(&corpus(&["x"]), 0), Err(Error::Config(_))));
    }

    #[test]
    fn save_load_is_stable() {
        let v = build_vocab(&corpus(&["hello there , general kenobi"]), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("kenobi"), v.id("kenobi"));
        assert_eq!(back.token(CLS), Some("[CLS]"));
    }
}
