//! Back-off n-gram models (orders 1 to 3).
//!
//! Probabilities are stored as log10 values. A query that misses an explicit
//! entry backs off: `score(h, w) = backoff(h) + score(h[1..], w)`, where an
//! absent history has a back-off weight of 0 (log domain).

pub mod arpa;
pub mod counts;
pub mod kneser_ney;

use std::collections::{BTreeMap, HashMap};

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, BOS, UNK};

pub use counts::count_ngrams;
pub use kneser_ney::{modified_kn_discounts, train_kneser_ney};

pub type WordId = u32;
pub(crate) type Key = SmallVec<[WordId; 3]>;

/// log10 value standing in for probability zero.
pub const LOG_ZERO: f64 = -99.0;

const MISSING: WordId = WordId::MAX;

/// Anything that assigns a log10 probability to a word given its history.
///
/// `history` lists the preceding words oldest first; sentence starts are
/// padded with `<s>` markers. Implementations must be total: unknown words
/// are scored through `<unk>` (or [`LOG_ZERO`] when there is none).
pub trait LanguageModel: Send + Sync {
    fn order(&self) -> usize;
    fn log10_prob(&self, history: &[&str], word: &str) -> f64;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn order(&self) -> usize {
        (**self).order()
    }
    fn log10_prob(&self, history: &[&str], word: &str) -> f64 {
        (**self).log10_prob(history, word)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn order(&self) -> usize {
        (**self).order()
    }
    fn log10_prob(&self, history: &[&str], word: &str) -> f64 {
        (**self).log10_prob(history, word)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramEntry {
    pub logprob: f64,
    pub backoff: Option<f64>,
}

impl NGramEntry {
    pub fn new(logprob: f64) -> Self {
        NGramEntry {
            logprob,
            backoff: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    words: Vec<String>,
    ids: HashMap<String, WordId>,
    tables: Vec<HashMap<Key, NGramEntry>>,
    bos: Option<WordId>,
    unk: Option<WordId>,
}

impl NGramModel {
    /// An empty model over `words` (ids follow the given order).
    pub(crate) fn empty(order: usize, words: Vec<String>) -> Self {
        assert!((1..=3).contains(&order), "order must be 1..=3");
        let ids: HashMap<String, WordId> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        NGramModel {
            order,
            bos: ids.get(BOS).copied(),
            unk: ids.get(UNK).copied(),
            ids,
            words,
            tables: vec![HashMap::new(); order],
        }
    }

    /// Uniform unigram model: every word of `vocab` except `<s>` gets the
    /// same probability.
    pub fn uniform(vocab: &Vocabulary) -> Self {
        let words: Vec<String> = vocab.iter().map(str::to_string).collect();
        let mut m = NGramModel::empty(1, words);
        let n = m.predicted_ids().count() as f64;
        for id in 0..m.words.len() as WordId {
            let lp = if Some(id) == m.bos {
                LOG_ZERO
            } else {
                -n.log10()
            };
            m.insert(&[id], NGramEntry::new(lp));
        }
        m
    }

    pub(crate) fn insert(&mut self, key: &[WordId], entry: NGramEntry) {
        self.tables[key.len() - 1].insert(Key::from_slice(key), entry);
    }

    pub(crate) fn entry_mut(&mut self, key: &[WordId]) -> Option<&mut NGramEntry> {
        self.tables[key.len() - 1].get_mut(key)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.ids.get(word).copied()
    }

    pub fn bos_id(&self) -> Option<WordId> {
        self.bos
    }

    pub fn unk_id(&self) -> Option<WordId> {
        self.unk
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_words(self.words.iter().cloned())
    }

    /// Ids of every word the model can predict (everything but `<s>`).
    pub fn predicted_ids(&self) -> impl Iterator<Item = WordId> + '_ {
        let bos = self.bos;
        (0..self.words.len() as WordId).filter(move |&id| Some(id) != bos)
    }

    pub fn entry(&self, key: &[WordId]) -> Option<&NGramEntry> {
        if key.is_empty() || key.len() > self.order {
            return None;
        }
        self.tables[key.len() - 1].get(key)
    }

    pub fn entry_by_words(&self, key: &[&str]) -> Option<&NGramEntry> {
        let ids: Option<Vec<WordId>> = key.iter().map(|w| self.word_id(w)).collect();
        self.entry(&ids?)
    }

    /// Number of explicit n-grams of length `n`.
    pub fn count(&self, n: usize) -> usize {
        self.tables.get(n - 1).map_or(0, HashMap::len)
    }

    /// Explicit n-grams of length `n` in unspecified order.
    pub fn entries(&self, n: usize) -> impl Iterator<Item = (&[WordId], &NGramEntry)> {
        self.tables[n - 1].iter().map(|(k, e)| (k.as_slice(), e))
    }

    /// Explicit n-grams of length `n` sorted by their token strings.
    pub fn sorted_entries(&self, n: usize) -> Vec<(Vec<&str>, &NGramEntry)> {
        let mut out: Vec<(Vec<&str>, &NGramEntry)> = self.tables[n - 1]
            .iter()
            .map(|(k, e)| (k.iter().map(|&id| self.word(id)).collect(), e))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn backoff(&self, history: &[WordId]) -> f64 {
        self.entry(history).and_then(|e| e.backoff).unwrap_or(0.0)
    }

    /// Maps a word to its id, falling back to `<unk>`.
    pub fn map_word(&self, word: &str) -> Option<WordId> {
        self.word_id(word).or(self.unk)
    }

    /// Back-off score over ids; only the last `order - 1` history ids matter.
    pub fn score_ids(&self, history: &[WordId], word: WordId) -> f64 {
        let keep = history.len().min(self.order - 1);
        let mut h = &history[history.len() - keep..];
        let mut acc = 0.0;
        loop {
            let mut key: Key = Key::from_slice(h);
            key.push(word);
            if let Some(e) = self.tables[h.len()].get(&key) {
                return acc + e.logprob;
            }
            if h.is_empty() {
                return LOG_ZERO;
            }
            acc += self.backoff(h);
            h = &h[1..];
        }
    }

    /// Histories of length `n` that have at least one explicit continuation,
    /// with their continuations sorted by id.
    pub(crate) fn continuations(&self, n: usize) -> BTreeMap<Key, Vec<WordId>> {
        let mut out: BTreeMap<Key, Vec<WordId>> = BTreeMap::new();
        if n >= self.order {
            return out;
        }
        for key in self.tables[n].keys() {
            out.entry(Key::from_slice(&key[..n]))
                .or_default()
                .push(key[n]);
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }

    /// Recomputes every back-off weight for histories of length
    /// `from_len..order` from the explicit probabilities so that each
    /// history's distribution sums to one.
    pub(crate) fn fill_backoffs(&mut self, from_len: usize) -> Result<()> {
        for n in from_len.max(1)..self.order {
            for (hist, conts) in self.continuations(n) {
                let mut explicit = 0.0;
                let mut lower = 0.0;
                for &w in &conts {
                    if Some(w) == self.bos {
                        continue;
                    }
                    let mut key = hist.clone();
                    key.push(w);
                    explicit += 10f64.powf(self.tables[n][&key].logprob);
                    lower += 10f64.powf(self.score_ids(&hist[1..], w));
                }
                let num = 1.0 - explicit;
                let den = 1.0 - lower;
                let words = &self.words;
                let history_words = || hist.iter().map(|&id| words[id as usize].clone()).collect();
                if num < -1e-9 {
                    return Err(Error::Normalization {
                        history: history_words(),
                        detail: format!("explicit mass {explicit} exceeds one"),
                    });
                }
                let bow = if num <= 1e-12 {
                    if den > 1e-12 {
                        LOG_ZERO
                    } else {
                        0.0
                    }
                } else if den <= 1e-12 {
                    return Err(Error::Normalization {
                        history: history_words(),
                        detail: format!("leftover mass {num} but no lower-order mass to carry it"),
                    });
                } else {
                    (num / den).log10()
                };
                match self.tables[n - 1].get_mut(&hist) {
                    Some(e) => e.backoff = Some(bow),
                    None => {
                        return Err(Error::Normalization {
                            history: history_words(),
                            detail: "history has no entry of its own".into(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    fn ids_for(&self, words: &[&str]) -> SmallVec<[WordId; 4]> {
        words
            .iter()
            .map(|w| self.map_word(w).unwrap_or(MISSING))
            .collect()
    }
}

impl LanguageModel for NGramModel {
    fn order(&self) -> usize {
        self.order
    }

    fn log10_prob(&self, history: &[&str], word: &str) -> f64 {
        let Some(w) = self.map_word(word) else {
            return LOG_ZERO;
        };
        let keep = history.len().min(self.order - 1);
        let h = self.ids_for(&history[history.len() - keep..]);
        self.score_ids(&h, w)
    }
}

/// Result of summing `p(w|h)` over every predictable word for each history.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    pub histories: usize,
    pub max_error: f64,
    pub worst_history: Vec<String>,
}

/// Exhaustively checks that every history with explicit continuations (and
/// the empty history) defines a distribution over the predictable words.
pub fn normalization_report(model: &NGramModel) -> NormalizationReport {
    let predicted: Vec<WordId> = model.predicted_ids().collect();
    let mut histories: Vec<Key> = vec![Key::new()];
    for n in 1..model.order() {
        histories.extend(model.continuations(n).into_keys());
    }
    let mut report = NormalizationReport {
        histories: histories.len(),
        max_error: 0.0,
        worst_history: Vec::new(),
    };
    for h in &histories {
        let total: f64 = predicted
            .iter()
            .map(|&w| 10f64.powf(model.score_ids(h, w)))
            .sum();
        let err = (total - 1.0).abs();
        if err > report.max_error {
            report.max_error = err;
            report.worst_history = h.iter().map(|&id| model.word(id).to_string()).collect();
        }
    }
    report
}
