//! Linear interpolation of language models.
//!
//! A [`Mixture`] is scored dynamically: `log10(sum_i w_i * 10^score_i)`.
//! [`tune_weights_em`] fits the weights on a development corpus and
//! [`static_merge`] flattens a mixture of n-gram models into one back-off
//! model whose explicit entries carry the exact mixture probabilities.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::events;
use crate::ngram::{LanguageModel, NGramEntry, NGramModel, WordId, LOG_ZERO};
use crate::vocab::{Vocabulary, BOS};

pub type SharedModel = Arc<dyn LanguageModel>;

#[derive(Clone)]
pub struct Mixture {
    names: Vec<String>,
    components: Vec<SharedModel>,
    weights: Vec<f64>,
}

impl std::fmt::Debug for Mixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mixture")
            .field("names", &self.names)
            .field("weights", &self.weights)
            .finish()
    }
}

impl Mixture {
    pub fn new(components: Vec<(String, SharedModel)>, weights: Vec<f64>) -> Result<Self> {
        if components.len() < 2 || components.len() != weights.len() {
            return Err(Error::MixtureShape);
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config(format!("negative or NaN weight in {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("weights sum to {total}, not 1")));
        }
        let (names, components) = components.into_iter().unzip();
        Ok(Mixture {
            names,
            components,
            weights,
        })
    }

    pub fn uniform(components: Vec<(String, SharedModel)>) -> Result<Self> {
        let k = components.len().max(1);
        Self::new(components, vec![1.0 / k as f64; k])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn components(&self) -> &[SharedModel] {
        &self.components
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Mixture::new(
            self.names.iter().cloned().zip(self.components.iter().cloned()).collect(),
            weights,
        )
    }

    /// `name<TAB>weight` lines.
    pub fn weights_record(&self) -> String {
        self.names
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| format!("{n}\t{w}\n"))
            .collect()
    }
}

/// `log10(sum_i w_i * 10^score_i(history, word))`.
pub fn mixture_score(m: &Mixture, history: &[&str], word: &str) -> f64 {
    let p: f64 = m
        .components
        .iter()
        .zip(&m.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(c, &w)| w * 10f64.powf(c.log10_prob(history, word)))
        .sum();
    if p > 0.0 {
        p.log10()
    } else {
        LOG_ZERO
    }
}

impl LanguageModel for Mixture {
    fn order(&self) -> usize {
        self.components.iter().map(|c| c.order()).max().unwrap_or(1)
    }

    fn log10_prob(&self, history: &[&str], word: &str) -> f64 {
        mixture_score(self, history, word)
    }
}

pub fn write_weights(path: impl AsRef<Path>, names: &[String], weights: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let text: String = names
        .iter()
        .zip(weights)
        .map(|(n, w)| format!("{n}\t{w}\n"))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, w) = line
            .rsplit_once('\t')
            .and_then(|(n, w)| Some((n.to_string(), w.trim().parse::<f64>().ok()?)))
            .ok_or_else(|| Error::Config(format!("{}:{}: expected name<TAB>weight", path.display(), i + 1)))?;
        out.push((name, w));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub mixture: Mixture,
    pub iterations: usize,
    pub converged: bool,
    /// Dev log10-likelihood before the first update and after every update.
    pub log_likelihood: Vec<f64>,
    /// Weights before the first update and after every update.
    pub trajectory: Vec<Vec<f64>>,
}

fn log_likelihood(probs: &[Vec<f64>], weights: &[f64]) -> f64 {
    probs
        .iter()
        .map(|p| p.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>().log10())
        .sum()
}

/// Fits mixture weights by expectation-maximization over the
/// in-vocabulary dev events, starting from uniform weights.
///
/// After EM stops, each one-hot weighting is also tried and kept if it has
/// a higher dev likelihood, so the result is never worse on dev than the
/// best single component.
pub fn tune_weights_em(
    components: Vec<(String, SharedModel)>,
    dev: &Corpus,
    vocab: &Vocabulary,
    opts: EmOptions,
) -> Result<EmOutcome> {
    let mixture = Mixture::uniform(components)?;
    let evs = events(dev, vocab);
    if evs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let floor = 10f64.powf(LOG_ZERO);
    let probs: Vec<Vec<f64>> = evs
        .par_iter()
        .map(|e| {
            mixture
                .components
                .iter()
                .map(|c| 10f64.powf(c.log10_prob(&e.history, e.word)))
                .collect()
        })
        .collect();
    for (e, p) in evs.iter().zip(&probs) {
        if p.iter().all(|&x| x <= floor) {
            return Err(Error::ZeroProbabilityEvent {
                sentence: e.sentence,
                word: e.word.to_string(),
            });
        }
    }

    let k = mixture.components.len();
    let n = probs.len() as f64;
    let mut weights = mixture.weights.clone();
    let mut ll = vec![log_likelihood(&probs, &weights)];
    let mut trajectory = vec![weights.clone()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut resp = vec![0.0; k];
        for p in &probs {
            let denom: f64 = p.iter().zip(&weights).map(|(p, w)| p * w).sum();
            for i in 0..k {
                resp[i] += weights[i] * p[i] / denom;
            }
        }
        let next: Vec<f64> = resp.iter().map(|r| r / n).collect();
        let delta = next
            .iter()
            .zip(&weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        weights = normalize(next);
        trajectory.push(weights.clone());
        let cur = log_likelihood(&probs, &weights);
        debug_assert!(cur >= ll[ll.len() - 1] - 1e-9 * n.max(1.0), "EM likelihood decreased");
        ll.push(cur);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let mut best = *ll.last().unwrap();
    for i in 0..k {
        let mut onehot = vec![0.0; k];
        onehot[i] = 1.0;
        let v = log_likelihood(&probs, &onehot);
        if v > best {
            best = v;
            weights = onehot;
        }
    }
    if best > *ll.last().unwrap() {
        ll.push(best);
        trajectory.push(weights.clone());
    }

    Ok(EmOutcome {
        mixture: mixture.with_weights(weights)?,
        iterations,
        converged,
        log_likelihood: ll,
        trajectory,
    })
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub model: NGramModel,
    /// Total unigram mass of the mixture before renormalization; differs
    /// from one only when the components disagree on vocabulary.
    pub unigram_mass: f64,
}

/// Flattens a weighted mixture of n-gram models into one back-off model.
///
/// The key set is the union of the components' key sets. Every explicit
/// entry gets the mixture probability at that key; back-off weights are
/// then recomputed history by history so each distribution sums to one.
pub fn static_merge(components: &[&NGramModel], weights: &[f64]) -> Result<MergeOutcome> {
    if components.len() < 2 || components.len() != weights.len() {
        return Err(Error::MixtureShape);
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::Config(format!("invalid weights {weights:?}")));
    }
    let order = components.iter().map(|m| m.order()).max().unwrap();
    let words: BTreeSet<&str> = components
        .iter()
        .flat_map(|m| m.words().iter().map(String::as_str))
        .collect();
    let mut merged = NGramModel::empty(order, words.into_iter().map(String::from).collect());
    let bos = merged.word_id(BOS);

    let score = |hist: &[&str], w: &str| -> f64 {
        let p: f64 = components
            .iter()
            .zip(weights)
            .filter(|(_, &l)| l > 0.0)
            .map(|(c, &l)| l * 10f64.powf(c.log10_prob(hist, w)))
            .sum();
        if p > 0.0 {
            p.log10()
        } else {
            LOG_ZERO
        }
    };

    let mut unigram_mass = 1.0;
    for n in 1..=order {
        let mut keys: BTreeSet<Vec<&str>> = BTreeSet::new();
        for m in components.iter().filter(|m| m.order() >= n) {
            for (k, _) in m.entries(n) {
                keys.insert(k.iter().map(|&id| m.word(id)).collect());
            }
        }
        let scored: Vec<(Vec<WordId>, f64)> = keys
            .par_iter()
            .map(|k| {
                let ids: Vec<WordId> = k.iter().map(|w| merged.word_id(w).unwrap()).collect();
                let lp = if Some(ids[n - 1]) == bos {
                    LOG_ZERO
                } else {
                    score(&k[..n - 1], k[n - 1])
                };
                (ids, lp)
            })
            .collect();
        for (ids, lp) in scored {
            merged.insert(&ids, NGramEntry::new(lp));
        }
        if n == 1 {
            unigram_mass = merged
                .predicted_ids()
                .filter_map(|id| merged.entry(&[id]).map(|e| 10f64.powf(e.logprob)))
                .sum();
            if (unigram_mass - 1.0).abs() > 1e-9 {
                log::warn!("merged unigram mass {unigram_mass}; renormalizing");
                let shift = unigram_mass.log10();
                let ids: Vec<WordId> = merged.predicted_ids().collect();
                for id in ids {
                    if let Some(e) = merged.entry_mut(&[id]) {
                        e.logprob -= shift;
                    }
                }
            }
        }
    }
    merged.fill_backoffs(1)?;
    Ok(MergeOutcome {
        model: merged,
        unigram_mass,
    })
}

/// How far a static model strays from the dynamic mixture it came from,
/// measured over the in-vocabulary events of a corpus (log10 units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub events: usize,
    pub max: f64,
    pub mean: f64,
}

pub fn merge_divergence(merged: &NGramModel, mixture: &Mixture, corpus: &Corpus, vocab: &Vocabulary) -> Divergence {
    let evs = events(corpus, vocab);
    let diffs: Vec<f64> = evs
        .par_iter()
        .map(|e| (merged.log10_prob(&e.history, e.word) - mixture_score(mixture, &e.history, e.word)).abs())
        .collect();
    let max = diffs.iter().copied().fold(0.0, f64::max);
    let mean = if diffs.is_empty() {
        0.0
    } else {
        diffs.iter().sum::<f64>() / diffs.len() as f64
    };
    Divergence {
        events: diffs.len(),
        max,
        mean,
    }
}
