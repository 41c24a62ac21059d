//! Ancestral sampling from a [`TokenSource`] with vocabulary restriction,
//! temperature and nucleus truncation.
//!
//! Every shard draws from its own ChaCha20 stream (`seed`, stream = shard
//! index), so a corpus is a pure function of the source, the config and the
//! seed, whether shards run in parallel or one after another.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::source::TokenSource;
use crate::tokenizer::TokenId;
use crate::vocab::{is_reserved, RestrictedTokenSet};

/// Sparse probability distribution over token ids, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    ids: Vec<TokenId>,
    probs: Vec<f64>,
}

impl Distribution {
    /// Builds a distribution from `(id, p)` pairs. Zero entries are dropped,
    /// duplicates are an error, and the total must be 1 within `1e-6`.
    pub fn new(pairs: impl IntoIterator<Item = (TokenId, f64)>) -> Result<Self> {
        let d = Self::unnormalized(pairs)?;
        let total = d.total();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Distribution(format!("mass {total} is not 1")));
        }
        Ok(d)
    }

    /// Like [`Distribution::new`] but rescales to unit mass.
    pub fn normalized(pairs: impl IntoIterator<Item = (TokenId, f64)>) -> Result<Self> {
        let mut d = Self::unnormalized(pairs)?;
        let total = d.total();
        if !(total > 0.0) {
            return Err(Error::Distribution("no probability mass".into()));
        }
        for p in &mut d.probs {
            *p /= total;
        }
        Ok(d)
    }

    fn unnormalized(pairs: impl IntoIterator<Item = (TokenId, f64)>) -> Result<Self> {
        let mut v: Vec<(TokenId, f64)> = pairs.into_iter().filter(|&(_, p)| p != 0.0).collect();
        if let Some(&(id, p)) = v.iter().find(|(_, p)| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Distribution(format!("token {id} has probability {p}")));
        }
        v.sort_unstable_by_key(|&(id, _)| id);
        if let Some(w) = v.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Distribution(format!("token {} listed twice", w[0].0)));
        }
        let (ids, probs) = v.into_iter().unzip();
        Ok(Distribution { ids, probs })
    }

    pub fn point(id: TokenId) -> Self {
        Distribution {
            ids: vec![id],
            probs: vec![1.0],
        }
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        match self.ids.binary_search(&id) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.ids.iter().copied().zip(self.probs.iter().copied())
    }

    /// Draws an id given `u` uniform in `[0, 1)`.
    pub fn draw(&self, u: f64) -> TokenId {
        let mut acc = 0.0;
        for (id, p) in self.iter() {
            acc += p;
            if u < acc {
                return id;
            }
        }
        *self.ids.last().expect("distribution is never empty")
    }
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub restriction: Option<Arc<RestrictedTokenSet>>,
    /// Sentences reaching this many tokens without end-of-text are cut.
    pub max_tokens: usize,
    pub seed: u64,
    /// Generated words per training word.
    pub target_multiplier: f64,
    pub shards: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            top_p: 0.95,
            temperature: 1.0,
            restriction: None,
            max_tokens: 512,
            seed: 0,
            target_multiplier: 100.0,
            shards: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.max_tokens == 0 || self.shards == 0 {
            return Err(Error::Config("max_tokens and shards must be positive".into()));
        }
        if !(self.target_multiplier > 0.0) {
            return Err(Error::Config("target_multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// Restriction, temperature, renormalization and nucleus truncation, in
/// that order. Nucleus keeps the smallest prefix of the descending-sorted
/// distribution (ties by ascending id) whose mass reaches `top_p`.
pub fn filter_and_truncate(dist: &Distribution, cfg: &SamplerConfig) -> Result<Distribution> {
    let mut kept: Vec<(TokenId, f64)> = match &cfg.restriction {
        Some(r) => dist.iter().filter(|&(id, _)| r.contains(id)).collect(),
        None => dist.iter().collect(),
    };
    if kept.is_empty() {
        return Err(Error::EmptySupport { context_len: 0 });
    }
    if cfg.temperature != 1.0 {
        // scale in the log domain so tiny probabilities do not underflow early
        let inv = 1.0 / cfg.temperature;
        let max_ln = kept.iter().map(|&(_, p)| p.ln()).fold(f64::NEG_INFINITY, f64::max);
        for (_, p) in &mut kept {
            *p = ((p.ln() - max_ln) * inv).exp();
        }
    }
    let total: f64 = kept.iter().map(|&(_, p)| p).sum();
    for (_, p) in &mut kept {
        *p /= total;
    }
    if cfg.top_p < 1.0 {
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut acc = 0.0;
        let mut keep = kept.len();
        for (i, &(_, p)) in kept.iter().enumerate() {
            acc += p;
            if acc >= cfg.top_p - 1e-12 {
                keep = i + 1;
                break;
            }
        }
        kept.truncate(keep);
        let total: f64 = kept.iter().map(|&(_, p)| p).sum();
        for (_, p) in &mut kept {
            *p /= total;
        }
    }
    Distribution::unnormalized(kept)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSentence {
    /// Emitted ids, end-of-text excluded.
    pub tokens: Vec<TokenId>,
    pub truncated: bool,
}

/// Caches filtered distributions for sources that hand back shared
/// distributions; keyed by allocation, holding the source `Arc` alive.
#[derive(Default)]
pub struct FilterCache {
    map: HashMap<usize, (Arc<Distribution>, Arc<Distribution>)>,
}

const FILTER_CACHE_LIMIT: usize = 200_000;

impl FilterCache {
    fn get(&mut self, dist: &Arc<Distribution>, cfg: &SamplerConfig) -> Result<Arc<Distribution>> {
        let key = Arc::as_ptr(dist) as usize;
        if let Some((_, f)) = self.map.get(&key) {
            return Ok(f.clone());
        }
        let f = Arc::new(filter_and_truncate(dist, cfg)?);
        if self.map.len() >= FILTER_CACHE_LIMIT {
            self.map.clear();
        }
        self.map.insert(key, (dist.clone(), f.clone()));
        Ok(f)
    }
}

/// Draws one sentence. The context starts from the source's start context
/// and is cut from the left to the source's maximum context length.
pub fn sample_sentence<R: Rng>(
    src: &dyn TokenSource,
    cfg: &SamplerConfig,
    rng: &mut R,
    cache: &mut FilterCache,
) -> Result<SampledSentence> {
    let eot = src.tokenizer().eot();
    let mut context = src.start_context();
    let start = context.len();
    let max_ctx = src.max_context().max(1);
    let mut tokens = Vec::new();
    while tokens.len() < cfg.max_tokens {
        let window = &context[context.len().saturating_sub(max_ctx)..];
        let dist = src.next_distribution(window)?;
        let filtered = cache.get(&dist, cfg).map_err(|e| match e {
            Error::EmptySupport { .. } => Error::EmptySupport {
                context_len: context.len() - start,
            },
            e => e,
        })?;
        let id = filtered.draw(rng.gen::<f64>());
        if id == eot {
            return Ok(SampledSentence {
                tokens,
                truncated: false,
            });
        }
        tokens.push(id);
        context.push(id);
    }
    Ok(SampledSentence {
        tokens,
        truncated: true,
    })
}

/// Generation settings and outcome, persisted next to the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub source: String,
    pub top_p: f64,
    pub temperature: f64,
    pub restricted: bool,
    pub restriction_size: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub shards: usize,
    pub target_multiplier: f64,
    pub train_words: usize,
    pub target_words: usize,
    pub sentences: usize,
    pub words: usize,
    pub tokens: usize,
    pub truncated: usize,
    pub empty_skipped: usize,
    /// Sentences dropped because a decoded word was a reserved marker.
    pub rejected: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub meta: GenerationMeta,
}

impl GeneratedCorpus {
    pub fn restricted(&self) -> bool {
        self.meta.restricted
    }

    /// Writes the corpus to `path` and the metadata to `<path>.meta.json`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.corpus.write(path)?;
        let meta = meta_path(path);
        let json = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))
    }

    pub fn read_meta(corpus_path: impl AsRef<Path>) -> Result<GenerationMeta> {
        let meta = meta_path(corpus_path.as_ref());
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", meta.display())))
    }
}

pub fn meta_path(corpus_path: &Path) -> PathBuf {
    let mut s = corpus_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Consecutive empty sentences tolerated before giving up.
const MAX_EMPTY_RUN: usize = 10_000;

struct Shard {
    sentences: Vec<Vec<String>>,
    words: usize,
    tokens: usize,
    truncated: usize,
    empty: usize,
    rejected: usize,
}

fn run_shard(src: &dyn TokenSource, cfg: &SamplerConfig, shard: usize, quota: usize) -> Result<Shard> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(shard as u64);
    let mut cache = FilterCache::default();
    let mut out = Shard {
        sentences: Vec::new(),
        words: 0,
        tokens: 0,
        truncated: 0,
        empty: 0,
        rejected: 0,
    };
    let mut empty_run = 0;
    while out.words < quota {
        let s = sample_sentence(src, cfg, &mut rng, &mut cache)?;
        out.tokens += s.tokens.len();
        out.truncated += s.truncated as usize;
        let words = src.tokenizer().detokenize(&s.tokens)?;
        if words.is_empty() {
            out.empty += 1;
            empty_run += 1;
            if empty_run >= MAX_EMPTY_RUN {
                return Err(Error::Stalled(empty_run));
            }
            continue;
        }
        empty_run = 0;
        if words.iter().any(|w| is_reserved(w)) {
            out.rejected += 1;
            continue;
        }
        out.words += words.len();
        out.sentences.push(words);
    }
    Ok(out)
}

/// Samples sentences until at least `target_multiplier * train_words`
/// words have been produced. The word target is split evenly over the
/// shards and their output is concatenated in shard order.
pub fn generate_corpus(src: &dyn TokenSource, cfg: &SamplerConfig, train_words: usize) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    if train_words == 0 {
        return Err(Error::Config("training word count must be positive".into()));
    }
    let target = (cfg.target_multiplier * train_words as f64).ceil() as usize;
    let k = cfg.shards;
    let quotas: Vec<usize> = (0..k).map(|i| target / k + usize::from(i < target % k)).collect();
    let shards: Vec<Shard> = if src.concurrent() && k > 1 {
        quotas
            .par_iter()
            .enumerate()
            .map(|(i, &q)| run_shard(src, cfg, i, q))
            .collect::<Result<_>>()?
    } else {
        quotas
            .iter()
            .enumerate()
            .map(|(i, &q)| run_shard(src, cfg, i, q))
            .collect::<Result<_>>()?
    };

    let mut meta = GenerationMeta {
        source: src.id(),
        top_p: cfg.top_p,
        temperature: cfg.temperature,
        restricted: cfg.restriction.is_some(),
        restriction_size: cfg.restriction.as_ref().map_or(0, |r| r.len()),
        max_tokens: cfg.max_tokens,
        seed: cfg.seed,
        shards: k,
        target_multiplier: cfg.target_multiplier,
        train_words,
        target_words: target,
        sentences: 0,
        words: 0,
        tokens: 0,
        truncated: 0,
        empty_skipped: 0,
        rejected: 0,
    };
    let mut sentences = Vec::new();
    for s in shards {
        meta.words += s.words;
        meta.tokens += s.tokens;
        meta.truncated += s.truncated;
        meta.empty_skipped += s.empty;
        meta.rejected += s.rejected;
        sentences.extend(s.sentences);
    }
    meta.sentences = sentences.len();
    let name = format!("{}@x{}/{}", src.id(), cfg.target_multiplier, cfg.seed);
    Ok(GeneratedCorpus {
        corpus: Corpus::from_sentences(name, sentences)?,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(top_p: f64, temperature: f64) -> SamplerConfig {
        SamplerConfig {
            top_p,
            temperature,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn sampler_defaults() {
        let c = SamplerConfig::default();
        assert_eq!((c.top_p, c.temperature, c.target_multiplier, c.max_tokens), (0.95, 1.0, 100.0, 512));
    }

    #[test]
    fn nucleus_example() {
        let d = Distribution::new([(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
        let f = filter_and_truncate(&d, &cfg(0.8, 1.0)).unwrap();
        assert_eq!(f.ids(), &[0, 1]);
        assert!((f.prob(0) - 0.625).abs() < 1e-15);
        assert!((f.prob(1) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn identity_configuration() {
        let d = Distribution::new([(3, 0.1), (7, 0.6), (9, 0.3)]).unwrap();
        assert_eq!(filter_and_truncate(&d, &cfg(1.0, 1.0)).unwrap(), d);
    }

    #[test]
    fn single_token_restriction_is_point_mass() {
        let d = Distribution::new([(3, 0.1), (7, 0.6), (9, 0.3)]).unwrap();
        let mut c = cfg(0.95, 0.7);
        c.restriction = Some(Arc::new(RestrictedTokenSet::from_ids([3])));
        assert_eq!(filter_and_truncate(&d, &c).unwrap(), Distribution::point(3));
        c.restriction = Some(Arc::new(RestrictedTokenSet::from_ids([4])));
        assert!(matches!(filter_and_truncate(&d, &c), Err(Error::EmptySupport { .. })));
    }

    #[test]
    fn nucleus_ties_break_by_id() {
        let d = Distribution::new([(5, 0.25), (2, 0.25), (9, 0.25), (1, 0.25)]).unwrap();
        let f = filter_and_truncate(&d, &cfg(0.5, 1.0)).unwrap();
        assert_eq!(f.ids(), &[1, 2]);
    }

    #[test]
    fn bad_distributions() {
        assert!(Distribution::new([(0, 0.5)]).is_err());
        assert!(Distribution::new([(0, 0.5), (0, 0.5)]).is_err());
        assert!(Distribution::new([(0, -0.5), (1, 1.5)]).is_err());
        assert!(Distribution::normalized([(0, 0.0)]).is_err());
    }

    fn arb_dist() -> impl Strategy<Value = Distribution> {
        prop::collection::btree_map(0u32..40, 1e-6f64..1.0, 1..25)
            .prop_map(|m| Distribution::normalized(m).unwrap())
    }

    proptest! {
        #[test]
        fn filtered_output_is_normalized_subset(
            d in arb_dist(),
            top_p in 0.05f64..=1.0,
            t in 0.2f64..3.0,
            allowed in prop::collection::btree_set(0u32..40, 1..40),
        ) {
            let mut c = cfg(top_p, t);
            c.restriction = Some(Arc::new(RestrictedTokenSet::from_ids(allowed.iter().copied())));
            match filter_and_truncate(&d, &c) {
                Ok(f) => {
                    prop_assert!((f.total() - 1.0).abs() <= 1e-9);
                    for id in f.ids() {
                        prop_assert!(d.prob(*id) > 0.0 && allowed.contains(id));
                    }
                }
                Err(Error::EmptySupport { .. }) => {
                    prop_assert!(d.ids().iter().all(|id| !allowed.contains(id)));
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn low_temperature_sharpens_argmax(d in arb_dist(), t in 0.05f64..1.0) {
            let before = d.probs().iter().copied().fold(0.0, f64::max);
            let f = filter_and_truncate(&d, &cfg(1.0, t)).unwrap();
            let after = f.probs().iter().copied().fold(0.0, f64::max);
            prop_assert!(after >= before - 1e-12);
        }
    }
}
