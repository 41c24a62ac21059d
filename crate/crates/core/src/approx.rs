//! Turning a token source into an n-gram model.
//!
//! Sampling-based approximation trains Kneser-Ney on text generated from
//! the source. Probability-based approximation keeps a baseline model's
//! n-gram inventory and reassigns its bigram and trigram probabilities from
//! word probabilities computed by the source.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ngram::{NGramModel, WordId, LOG_ZERO};
use crate::sampling::GeneratedCorpus;
use crate::source::TokenSource;
use crate::tokenizer::Spacing;
use crate::vocab::{Vocabulary, BOS, EOS};
use crate::train_kneser_ney;

#[derive(Debug, Clone)]
pub struct LabeledModel {
    pub label: &'static str,
    pub model: NGramModel,
}

/// Kneser-Ney on generated text. The label tells restricted (`VR-KN3`)
/// and unrestricted (`RS-KN3`) generation apart.
pub fn sba_build(generated: &GeneratedCorpus, vocab: &Vocabulary) -> Result<LabeledModel> {
    let model = train_kneser_ney(&generated.corpus, vocab)?;
    let label = if generated.restricted() { "VR-KN3" } else { "RS-KN3" };
    Ok(LabeledModel { label, model })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordProb {
    pub prob: f64,
    pub pieces: usize,
    /// The context had to be cut to the source's maximum length.
    pub truncated: bool,
}

/// Probability of `word` after `history` as the product of its pieces'
/// conditionals. `</s>` is scored as the end-of-text token.
pub fn word_prob(src: &dyn TokenSource, history: &[&str], word: &str) -> Result<WordProb> {
    let tok = src.tokenizer();
    let mut ctx = src.history_context(history)?;
    let pieces = if word == EOS {
        vec![tok.eot()]
    } else {
        let spacing = if history.iter().all(|w| *w == BOS) {
            Spacing::Plain
        } else {
            Spacing::Space
        };
        tok.tokenize(word, spacing)?
    };
    if pieces.is_empty() {
        return Err(Error::Tokenize {
            word: word.into(),
            reason: "no pieces".into(),
        });
    }
    let max = src.max_context().max(1);
    let mut prob = 1.0;
    let mut truncated = false;
    for &p in &pieces {
        let start = ctx.len().saturating_sub(max);
        truncated |= start > 0;
        prob *= src.next_distribution(&ctx[start..])?.prob(p);
        ctx.push(p);
    }
    Ok(WordProb {
        prob,
        pieces: pieces.len(),
        truncated,
    })
}

/// Which history the source sees when scoring an n-gram occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum PbaContext {
    /// The whole sentence prefix; bigram and trigram keys at a position
    /// share one estimate.
    #[default]
    FullSentence,
    /// Only the key's own history words.
    NGramHistory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PbaReport {
    pub histories: usize,
    /// Histories whose occurrences got no neural mass and kept the
    /// baseline probabilities.
    pub fallback_histories: usize,
    /// Mean of `cover(h) / sum p̂(.|h)` over reassigned histories.
    pub mean_renormalization: f64,
    pub keys_reassigned: usize,
    pub occurrences: usize,
    pub truncated_contexts: usize,
}

type Acc = BTreeMap<Vec<WordId>, (f64, u64)>;

fn accumulate_sentence(
    src: &dyn TokenSource,
    baseline: &NGramModel,
    sentence: &[String],
    mode: PbaContext,
) -> Result<(Vec<(Vec<WordId>, f64)>, usize)> {
    let mut padded: Vec<&str> = vec![BOS, BOS];
    padded.extend(sentence.iter().map(String::as_str));
    padded.push(EOS);
    let ids: Vec<WordId> = padded
        .iter()
        .map(|w| {
            baseline
                .word_id(w)
                .ok_or_else(|| Error::NotInVocabulary { word: w.to_string() })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut truncated = 0;
    for i in 2..padded.len() {
        let w = padded[i];
        let shared = match mode {
            PbaContext::FullSentence => {
                let p = word_prob(src, &padded[..i], w)?;
                truncated += p.truncated as usize;
                Some(p.prob)
            }
            PbaContext::NGramHistory => None,
        };
        for n in 2..=baseline.order() {
            let key = &ids[i + 1 - n..=i];
            if baseline.entry(key).is_none() {
                continue;
            }
            let p = match shared {
                Some(p) => p,
                None => {
                    let wp = word_prob(src, &padded[i + 1 - n..i], w)?;
                    truncated += wp.truncated as usize;
                    wp.prob
                }
            };
            out.push((key.to_vec(), p));
        }
    }
    Ok((out, truncated))
}

/// Probability-based approximation onto `baseline`'s inventory.
///
/// Each explicit bigram and trigram key seen in `train` gets the mean
/// source probability over its occurrences; per history these estimates
/// are rescaled to the baseline's explicit mass `cover(h)`. Unigrams are
/// copied verbatim. Because every bigram history keeps its explicit mass
/// and the unigrams do not change, bigram-history back-off weights stay
/// valid; trigram-history weights are recomputed.
pub fn pba_build(
    src: &dyn TokenSource,
    train: &Corpus,
    baseline: &NGramModel,
    mode: PbaContext,
) -> Result<(NGramModel, PbaReport)> {
    let per_sentence: Vec<(Vec<(Vec<WordId>, f64)>, usize)> = if src.concurrent() {
        train
            .sentences()
            .par_iter()
            .map(|s| accumulate_sentence(src, baseline, s, mode))
            .collect::<Result<_>>()?
    } else {
        train
            .sentences()
            .iter()
            .map(|s| accumulate_sentence(src, baseline, s, mode))
            .collect::<Result<_>>()?
    };
    let mut report = PbaReport::default();
    let mut acc: Acc = BTreeMap::new();
    for (contribs, truncated) in per_sentence {
        report.truncated_contexts += truncated;
        for (key, p) in contribs {
            report.occurrences += 1;
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += p;
            e.1 += 1;
        }
    }

    let mut model = baseline.clone();
    let bos = baseline.bos_id();
    let mut factor_sum = 0.0;
    let mut reassigned = 0usize;
    for n in 1..baseline.order() {
        for (hist, conts) in baseline.continuations(n) {
            let conts: Vec<WordId> = conts.into_iter().filter(|&w| Some(w) != bos).collect();
            let key = |w: WordId| {
                let mut k = hist.to_vec();
                k.push(w);
                k
            };
            let estimated: Vec<(WordId, f64, f64)> = conts
                .iter()
                .filter_map(|&w| {
                    let k = key(w);
                    let &(sum, count) = acc.get(&k)?;
                    let base = 10f64.powf(baseline.entry(&k).unwrap().logprob);
                    Some((w, sum / count as f64, base))
                })
                .collect();
            if estimated.is_empty() {
                continue;
            }
            report.histories += 1;
            let cover: f64 = estimated.iter().map(|e| e.2).sum();
            let mass: f64 = estimated.iter().map(|e| e.1).sum();
            if !(mass > 0.0) {
                report.fallback_histories += 1;
                log::info!(
                    "no source mass for history {:?}; keeping baseline probabilities",
                    hist.iter().map(|&id| baseline.word(id)).collect::<Vec<_>>()
                );
                continue;
            }
            let scale = cover / mass;
            factor_sum += scale;
            reassigned += 1;
            for (w, p_hat, _) in estimated {
                let p = p_hat * scale;
                let e = model.entry_mut(&key(w)).expect("key comes from the baseline");
                e.logprob = if p > 0.0 { p.log10() } else { LOG_ZERO };
                report.keys_reassigned += 1;
            }
        }
    }
    report.mean_renormalization = if reassigned > 0 {
        factor_sum / reassigned as f64
    } else {
        1.0
    };
    if model.order() > 2 {
        model.fill_backoffs(2)?;
    }
    Ok((model, report))
}
