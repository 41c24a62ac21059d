//! Perplexity under SRILM conventions.
//!
//! Every sentence contributes its words plus one end-of-sentence event.
//! Words outside the evaluation vocabulary are OOVs: they are counted, their
//! probability is left out of the sum, and they drop out of the
//! denominator, but the history still moves past them.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::ngram::LanguageModel;
use crate::vocab::{Vocabulary, BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub logprob_sum: f64,
    pub n_words: usize,
    pub n_sentences: usize,
    pub n_oov: usize,
    /// Includes end-of-sentence events.
    pub ppl: f64,
    /// Excludes end-of-sentence events.
    pub ppl1: f64,
}

impl PerplexityReport {
    pub fn from_sums(logprob_sum: f64, n_words: usize, n_sentences: usize, n_oov: usize) -> Self {
        let scored = (n_words - n_oov) as f64;
        PerplexityReport {
            logprob_sum,
            n_words,
            n_sentences,
            n_oov,
            ppl: 10f64.powf(-logprob_sum / (scored + n_sentences as f64)),
            ppl1: 10f64.powf(-logprob_sum / scored),
        }
    }

    /// `key=value` records, one per line.
    pub fn records(&self) -> String {
        format!(
            "logprob_sum={}\nwords={}\nsentences={}\noov={}\nppl={}\nppl1={}\n",
            self.logprob_sum, self.n_words, self.n_sentences, self.n_oov, self.ppl, self.ppl1
        )
    }
}

impl fmt::Display for PerplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} sentences, {} words, {} OOVs; logprob= {:.6} ppl= {:.4} ppl1= {:.4}",
            self.n_sentences, self.n_words, self.n_oov, self.logprob_sum, self.ppl, self.ppl1
        )
    }
}

/// One scored prediction: `word` given the two preceding tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event<'a> {
    pub sentence: usize,
    pub history: [&'a str; 2],
    pub word: &'a str,
}

/// In-vocabulary events of `corpus`, end-of-sentence included.
pub fn events<'a>(corpus: &'a Corpus, vocab: &Vocabulary) -> Vec<Event<'a>> {
    let mut out = Vec::with_capacity(corpus.word_count() + corpus.len());
    for (i, s) in corpus.sentences().iter().enumerate() {
        let mut history = [BOS, BOS];
        for w in s.iter().map(String::as_str).chain(std::iter::once(EOS)) {
            if w == EOS || vocab.contains(w) {
                out.push(Event {
                    sentence: i,
                    history,
                    word: w,
                });
            }
            history = [history[1], w];
        }
    }
    out
}

fn sentence_score(model: &dyn LanguageModel, sentence: &[String], vocab: &Vocabulary) -> (f64, usize) {
    let mut history = [BOS, BOS];
    let mut sum = 0.0;
    let mut oov = 0;
    for w in sentence.iter().map(String::as_str) {
        if vocab.contains(w) {
            sum += model.log10_prob(&history, w);
        } else {
            oov += 1;
        }
        history = [history[1], w];
    }
    sum += model.log10_prob(&history, EOS);
    (sum, oov)
}

pub fn evaluate(model: &dyn LanguageModel, corpus: &Corpus, vocab: &Vocabulary) -> PerplexityReport {
    let per_sentence: Vec<(f64, usize)> = corpus
        .sentences()
        .par_iter()
        .map(|s| sentence_score(model, s, vocab))
        .collect();
    let mut logprob_sum = 0.0;
    let mut n_oov = 0;
    for (lp, oov) in per_sentence {
        logprob_sum += lp;
        n_oov += oov;
    }
    PerplexityReport::from_sums(logprob_sum, corpus.word_count(), corpus.len(), n_oov)
}

/// Natural-log probability of one subword, aligned to a word of a sentence.
/// `word == None` marks an end-of-text record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubwordLogProb {
    pub sentence: usize,
    pub word: Option<usize>,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordPerplexity {
    pub ppl: f64,
    pub n_words: usize,
    pub ln_sum: f64,
}

/// `exp(-ln_sum / n_words)`.
pub fn word_perplexity(ln_sum: f64, n_words: usize) -> Result<f64> {
    if n_words == 0 {
        return Err(Error::NoWords);
    }
    Ok((-ln_sum / n_words as f64).exp())
}

/// Word-level perplexity from subword log-probabilities: a word's
/// probability is the product of its subwords' conditionals, so only the
/// total and the number of words matter. End-of-text records count as an
/// extra event per sentence only when `include_end` is set.
pub fn word_ppl_from_subword(records: &[SubwordLogProb], include_end: bool) -> Result<WordPerplexity> {
    let mut n_words = 0;
    let mut ln_sum = 0.0;
    let mut prev: Option<(usize, Option<usize>)> = None;
    for r in records {
        let slot = (r.sentence, r.word);
        if let Some((ps, pw)) = prev {
            let backwards = r.sentence < ps
                || (r.sentence == ps && matches!((pw, r.word), (None, Some(_))))
                || (r.sentence == ps && matches!((pw, r.word), (Some(a), Some(b)) if b < a));
            if backwards {
                return Err(Error::Config(format!(
                    "subword records out of order at sentence {} word {:?}",
                    r.sentence, r.word
                )));
            }
        }
        if r.word.is_none() && !include_end {
            prev = Some(slot);
            continue;
        }
        if prev != Some(slot) || r.word.is_none() {
            n_words += 1;
        }
        ln_sum += r.logprob;
        prev = Some(slot);
    }
    Ok(WordPerplexity {
        ppl: word_perplexity(ln_sum, n_words)?,
        n_words,
        ln_sum,
    })
}

/// Reads `sentence<TAB>word<TAB>logprob` lines; `word` is a 0-based index or
/// `</s>` for the end-of-text record. Lines starting with `#` are skipped.
pub fn read_subword_logprobs(path: impl AsRef<Path>) -> Result<Vec<SubwordLogProb>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |i: usize, line: &str| Error::Config(format!("{}:{}: malformed record {line:?}", path.display(), i + 1));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(bad(i, line));
        }
        let sentence = f[0].trim().parse().map_err(|_| bad(i, line))?;
        let word = match f[1].trim() {
            EOS => None,
            w => Some(w.parse().map_err(|_| bad(i, line))?),
        };
        let logprob: f64 = f[f.len() - 1].trim().parse().map_err(|_| bad(i, line))?;
        out.push(SubwordLogProb { sentence, word, logprob });
    }
    Ok(out)
}
