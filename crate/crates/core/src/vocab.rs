use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::tokenizer::{Spacing, SubwordTokenizer, TokenId};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub fn is_reserved(word: &str) -> bool {
    matches!(word, BOS | EOS | UNK)
}

/// Word-level vocabulary. Always contains the three reserved markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: BTreeSet<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let words = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        Vocabulary { words }
    }

    pub fn insert(&mut self, word: impl Into<String>) {
        self.words.insert(word.into());
    }

    pub fn extend_from(&mut self, corpus: &Corpus) {
        for w in corpus.words() {
            if !self.words.contains(w) {
                self.words.insert(w.to_string());
            }
        }
    }

    pub fn union(&self, other: &Vocabulary) -> Vocabulary {
        Vocabulary {
            words: self.words.union(&other.words).cloned().collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    /// All words in sorted order, reserved markers included.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Words excluding the reserved markers.
    pub fn plain_words(&self) -> impl Iterator<Item = &str> {
        self.iter().filter(|w| !is_reserved(w))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary::new();
        for w in words {
            v.insert(w);
        }
        v
    }

    /// One word per line, reserved markers omitted.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for w in self.plain_words() {
            text.push_str(w);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Vocabulary::from_words(text.split_whitespace()))
    }
}

pub fn build_vocabulary(corpora: &[&Corpus]) -> Result<Vocabulary> {
    if corpora.is_empty() {
        return Err(Error::NoCorpora);
    }
    let mut v = Vocabulary::new();
    for c in corpora {
        v.extend_from(c);
    }
    Ok(v)
}

/// Subword ids that restricted decoding may emit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RestrictedTokenSet {
    token_ids: BTreeSet<TokenId>,
    provenance: BTreeMap<String, Vec<Vec<TokenId>>>,
}

impl RestrictedTokenSet {
    pub fn from_ids(ids: impl IntoIterator<Item = TokenId>) -> Self {
        RestrictedTokenSet {
            token_ids: ids.into_iter().collect(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.token_ids.contains(&id)
    }

    pub fn token_ids(&self) -> &BTreeSet<TokenId> {
        &self.token_ids
    }

    pub fn provenance(&self) -> &BTreeMap<String, Vec<Vec<TokenId>>> {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Token-id file: one decimal id per line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text: String = self.token_ids.iter().map(|id| format!("{id}\n")).collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let id = line.parse().map_err(|_| {
                Error::Config(format!("{}:{}: bad token id {line:?}", path.display(), i + 1))
            })?;
            ids.insert(id);
        }
        Ok(RestrictedTokenSet {
            token_ids: ids,
            provenance: BTreeMap::new(),
        })
    }
}

/// Collects the subword ids of both spacing variants of every vocabulary
/// word (reserved markers included), plus the end-of-text id.
pub fn build_restricted_token_set(
    vocab: &Vocabulary,
    tokenizer: &dyn SubwordTokenizer,
) -> Result<RestrictedTokenSet> {
    let mut token_ids = BTreeSet::new();
    let mut provenance = BTreeMap::new();
    token_ids.insert(tokenizer.eot());
    for word in vocab.iter() {
        let mut seqs: Vec<Vec<TokenId>> = Vec::with_capacity(2);
        for variant in [Spacing::Plain, Spacing::Space] {
            let ids = tokenizer.tokenize(word, variant)?;
            if ids.is_empty() {
                return Err(Error::Tokenize {
                    word: word.to_string(),
                    reason: "empty tokenization".into(),
                });
            }
            token_ids.extend(ids.iter().copied());
            if !seqs.contains(&ids) {
                seqs.push(ids);
            }
        }
        provenance.insert(word.to_string(), seqs);
    }
    Ok(RestrictedTokenSet {
        token_ids,
        provenance,
    })
}
