//! Subword tokenizer interface and two small built-in tokenizers.
//!
//! A neural adapter supplies its own BPE tokenizer through the same trait;
//! the built-ins exist so that restricted decoding and the approximation
//! pipelines can run without one.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Whether a word is tokenized as if preceded by a blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spacing {
    Plain,
    Space,
}

impl Spacing {
    pub fn as_str(self) -> &'static str {
        match self {
            Spacing::Plain => "plain",
            Spacing::Space => "space",
        }
    }
}

pub trait SubwordTokenizer: Send + Sync {
    fn tokenize(&self, word: &str, spacing: Spacing) -> Result<Vec<TokenId>>;

    fn eot(&self) -> TokenId;

    /// Turns a generated id sequence (without end-of-text) back into words.
    /// A piece carrying a leading-blank marker starts a new word; any other
    /// piece extends the current one.
    fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<String>>;
}

/// Character-level toy tokenizer. Id 0 is end-of-text; every other id
/// encodes a code point and, when spacing is distinguished, whether the
/// character carries a leading blank.
#[derive(Debug, Clone, Copy)]
pub struct CharTokenizer {
    distinguish_spacing: bool,
}

impl CharTokenizer {
    pub const EOT: TokenId = 0;

    pub fn new(distinguish_spacing: bool) -> Self {
        CharTokenizer {
            distinguish_spacing,
        }
    }

    pub fn char_id(c: char, blank: bool) -> TokenId {
        2 * c as u32 + 2 + blank as u32
    }

    pub fn decode_id(id: TokenId) -> Option<(char, bool)> {
        if id < 2 {
            return None;
        }
        let blank = (id - 2) % 2 == 1;
        char::from_u32((id - 2) / 2).map(|c| (c, blank))
    }
}

impl SubwordTokenizer for CharTokenizer {
    fn tokenize(&self, word: &str, spacing: Spacing) -> Result<Vec<TokenId>> {
        if word.is_empty() {
            return Err(Error::Tokenize {
                word: word.into(),
                reason: "empty word".into(),
            });
        }
        let blank_first = self.distinguish_spacing && spacing == Spacing::Space;
        Ok(word
            .chars()
            .enumerate()
            .map(|(i, c)| Self::char_id(c, blank_first && i == 0))
            .collect())
    }

    fn eot(&self) -> TokenId {
        Self::EOT
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        let mut words: Vec<String> = Vec::new();
        for &id in ids {
            let (c, blank) = Self::decode_id(id).ok_or(Error::Detokenize { id })?;
            match words.last_mut() {
                Some(w) if !blank => w.push(c),
                _ => words.push(c.to_string()),
            }
        }
        Ok(words)
    }
}

/// One id per word; both spacing variants map to the same id.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    eot: TokenId,
}

impl WordTokenizer {
    /// `words[i]` receives id `i`; `eot` must be the id of the end marker.
    pub fn new(words: Vec<String>, eot: TokenId) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        WordTokenizer { words, index, eot }
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }
}

impl SubwordTokenizer for WordTokenizer {
    fn tokenize(&self, word: &str, _spacing: Spacing) -> Result<Vec<TokenId>> {
        self.id(word).map(|id| vec![id]).ok_or_else(|| Error::Tokenize {
            word: word.into(),
            reason: "not in the word-level vocabulary".into(),
        })
    }

    fn eot(&self) -> TokenId {
        self.eot
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                if id == self.eot {
                    return Err(Error::Detokenize { id });
                }
                self.word(id)
                    .map(str::to_string)
                    .ok_or(Error::Detokenize { id })
            })
            .collect()
    }
}
