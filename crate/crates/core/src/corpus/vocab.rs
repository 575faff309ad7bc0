use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::tokenize::{detokenize, tokenize, utterance_tokens};
use crate::error::{DamsError, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const MASK: usize = 2;
pub const BOS: usize = 3;
pub const EOS: usize = 4;
pub const UNK: usize = 5;
pub const NUM_SPECIALS: usize = 6;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[CLS]", "[MASK]", "[BOS]", "[EOS]", "[UNK]"];

/// Longest token sequence fed to a token encoder, [CLS] included.
pub const MAX_SEQUENCE_TOKENS: usize = 64;

/// Token ↔ id bijection with the reserved specials at ids 0..6.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Most frequent tokens of `texts` after the specials, ties broken
    /// lexicographically, at most `max_size` entries in total.
    pub fn build<I, S>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size <= NUM_SPECIALS {
            return Err(DamsError::Config(format!("vocabulary size {max_size} leaves no room for words")));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut any = false;
        for t in texts {
            any = true;
            for tok in tokenize(t.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !any {
            return Err(DamsError::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t).take(max_size - NUM_SPECIALS))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(DamsError::Config(format!("vocabulary id {i} must be {s}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(DamsError::Config(format!("vocabulary entry {i} is not a single token: {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(DamsError::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(SPECIAL_TOKENS[UNK])
    }

    /// Ids of `text` without any special token.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Text of `ids`, specials dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids.iter().filter(|&&i| i >= NUM_SPECIALS).map(|&i| self.token(i)).collect();
        detokenize(&toks)
    }

    /// `[CLS] speaker : text`, truncated tail-first to [`MAX_SEQUENCE_TOKENS`].
    pub fn format_utterance(&self, speaker: &str, text: &str) -> Vec<usize> {
        let mut ids = vec![CLS];
        ids.extend(utterance_tokens(speaker, text).iter().map(|t| self.id(t)));
        ids.truncate(MAX_SEQUENCE_TOKENS);
        ids
    }

    /// `[CLS] sentence`, truncated tail-first to [`MAX_SEQUENCE_TOKENS`].
    pub fn format_sentence(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![CLS];
        ids.extend(self.encode(text));
        ids.truncate(MAX_SEQUENCE_TOKENS);
        ids
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| DamsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DamsError::io(path, e))?;
        Self::from_lines(&text)
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn to_lines(&self) -> String {
        self.tokens.join("\n")
    }
}
