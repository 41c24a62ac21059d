//! Next-token distribution providers.
//!
//! [`TokenSource`] is the boundary to the neural side: the adapter client
//! implements it over the wire protocol, and [`NGramTeacher`] implements it
//! in-process so every pipeline can run without a neural model.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::ngram::{NGramModel, WordId};
use crate::sampling::Distribution;
use crate::tokenizer::{CharTokenizer, SubwordTokenizer, TokenId, WordTokenizer};
use crate::vocab::{BOS, EOS};

pub trait TokenSource: Send + Sync {
    /// Identity recorded in generation metadata.
    fn id(&self) -> String;

    fn tokenizer(&self) -> &dyn SubwordTokenizer;

    /// Distribution of the token following `context`. Must be deterministic
    /// for a fixed context.
    fn next_distribution(&self, context: &[TokenId]) -> Result<Arc<Distribution>>;

    /// Tokens every sentence is conditioned on before its first word.
    fn start_context(&self) -> Vec<TokenId> {
        Vec::new()
    }

    /// Longest context the source accepts; longer contexts are cut from the
    /// left by callers.
    fn max_context(&self) -> usize;

    /// Whether concurrent callers are allowed; single-client sources are
    /// driven sequentially.
    fn concurrent(&self) -> bool {
        true
    }

    /// Token context for a word-level history. Leading `<s>` markers are
    /// replaced by the start context; the first real word is tokenized
    /// without a preceding blank and the rest with one.
    fn history_context(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        let tok = self.tokenizer();
        let mut ctx = self.start_context();
        let body = words.iter().skip_while(|w| **w == BOS);
        for (i, w) in body.enumerate() {
            let spacing = if i == 0 {
                crate::tokenizer::Spacing::Plain
            } else {
                crate::tokenizer::Spacing::Space
            };
            ctx.extend(tok.tokenize(w, spacing)?);
        }
        Ok(ctx)
    }
}

type Cache = RwLock<HashMap<Vec<TokenId>, Arc<Distribution>>>;

fn cached(cache: &Cache, key: &[TokenId], build: impl FnOnce() -> Result<Distribution>) -> Result<Arc<Distribution>> {
    if let Some(d) = cache.read().expect("cache lock").get(key) {
        return Ok(d.clone());
    }
    let d = Arc::new(build()?);
    let mut w = cache.write().expect("cache lock");
    Ok(w.entry(key.to_vec()).or_insert(d).clone())
}

/// A back-off n-gram model used as a word-atomic token source.
///
/// Token ids are the model's word ids and end-of-text is `</s>`. The
/// distribution after a context depends only on its last `order - 1`
/// tokens; `<s>` and `<unk>` are never emitted and the remaining mass is
/// renormalized.
pub struct NGramTeacher {
    name: String,
    model: Arc<NGramModel>,
    tokenizer: WordTokenizer,
    emit: Vec<WordId>,
    cache: Cache,
}

impl NGramTeacher {
    pub fn new(name: impl Into<String>, model: Arc<NGramModel>) -> Result<Self> {
        let eos = model
            .word_id(EOS)
            .ok_or_else(|| Error::NotInVocabulary { word: EOS.into() })?;
        let skip = [model.bos_id(), model.unk_id()];
        let emit = (0..model.words().len() as WordId)
            .filter(|id| !skip.contains(&Some(*id)))
            .collect();
        Ok(NGramTeacher {
            name: name.into(),
            tokenizer: WordTokenizer::new(model.words().to_vec(), eos),
            model,
            emit,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &NGramModel {
        &self.model
    }

    pub fn word_tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }
}

impl TokenSource for NGramTeacher {
    fn id(&self) -> String {
        format!("ngram:{}", self.name)
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        &self.tokenizer
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Arc<Distribution>> {
        let keep = context.len().min(self.model.order() - 1);
        let h = &context[context.len() - keep..];
        cached(&self.cache, h, || {
            Distribution::normalized(
                self.emit
                    .iter()
                    .map(|&w| (w, 10f64.powf(self.model.score_ids(h, w)))),
            )
        })
    }

    fn start_context(&self) -> Vec<TokenId> {
        self.model.bos_id().map(|b| vec![b, b]).unwrap_or_default()
    }

    fn max_context(&self) -> usize {
        usize::MAX
    }

    /// Words map one-to-one onto ids, `<s>` included, with no implicit
    /// start padding.
    fn history_context(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| {
                self.model
                    .map_word(w)
                    .ok_or_else(|| Error::NotInVocabulary { word: w.to_string() })
            })
            .collect()
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_tokens(seed: u64, tokens: &[TokenId], id: TokenId) -> u64 {
    let mut h = mix(seed);
    for &t in tokens {
        h = mix(h ^ t as u64);
    }
    mix(h ^ ((id as u64) << 32 | 0xfeed))
}

/// Uniform in `[0, 1)` from a hash.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Multiplies every probability of an inner source by a fixed log-uniform
/// factor `exp(sigma * z)`, `z` in `[-1, 1)`, determined by the last
/// `key_len` context tokens and the token id, then renormalizes.
pub struct PerturbedSource {
    inner: Arc<dyn TokenSource>,
    sigma: f64,
    seed: u64,
    key_len: usize,
    cache: Cache,
}

impl PerturbedSource {
    pub fn new(inner: Arc<dyn TokenSource>, sigma: f64, seed: u64, key_len: usize) -> Self {
        PerturbedSource {
            inner,
            sigma,
            seed,
            key_len,
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl TokenSource for PerturbedSource {
    fn id(&self) -> String {
        format!("{}~{}/{}", self.inner.id(), self.sigma, self.seed)
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        self.inner.tokenizer()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Arc<Distribution>> {
        let tail = &context[context.len().saturating_sub(self.key_len)..];
        cached(&self.cache, tail, || {
            let d = self.inner.next_distribution(context)?;
            Distribution::normalized(d.iter().map(|(id, p)| {
                let z = 2.0 * unit(hash_tokens(self.seed, tail, id)) - 1.0;
                (id, p * (self.sigma * z).exp())
            }))
        })
    }

    fn start_context(&self) -> Vec<TokenId> {
        self.inner.start_context()
    }

    fn max_context(&self) -> usize {
        self.inner.max_context()
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }

    fn history_context(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        self.inner.history_context(words)
    }
}

/// Character-level toy source: a first-order Markov chain over the pieces
/// of a [`CharTokenizer`] (each character with and without a leading blank)
/// plus end-of-text, with hashed random weights.
pub struct CharMarkovSource {
    alphabet: Vec<char>,
    tokenizer: CharTokenizer,
    seed: u64,
    eot_weight: f64,
    cache: Cache,
}

impl CharMarkovSource {
    pub fn new(alphabet: &str, seed: u64, eot_weight: f64) -> Self {
        CharMarkovSource {
            alphabet: alphabet.chars().collect(),
            tokenizer: CharTokenizer::new(true),
            seed,
            eot_weight,
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl TokenSource for CharMarkovSource {
    fn id(&self) -> String {
        format!("chars:{}/{}", self.alphabet.iter().collect::<String>(), self.seed)
    }

    fn tokenizer(&self) -> &dyn SubwordTokenizer {
        &self.tokenizer
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Arc<Distribution>> {
        let last = &context[context.len().saturating_sub(1)..];
        cached(&self.cache, last, || {
            let mut pairs = vec![(CharTokenizer::EOT, if last.is_empty() { 0.0 } else { self.eot_weight })];
            for &c in &self.alphabet {
                for blank in [false, true] {
                    let id = CharTokenizer::char_id(c, blank);
                    // the first piece of a sentence never carries a blank
                    let w = if last.is_empty() && blank {
                        0.0
                    } else {
                        0.05 + unit(hash_tokens(self.seed, last, id))
                    };
                    pairs.push((id, w));
                }
            }
            Distribution::normalized(pairs)
        })
    }

    fn max_context(&self) -> usize {
        1024
    }
}
