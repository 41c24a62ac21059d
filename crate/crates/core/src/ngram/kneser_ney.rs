//! Interpolated modified Kneser-Ney estimation for trigram models.
//!
//! Adjusted counts: trigrams use raw counts; a bigram `(v, w)` uses the
//! number of distinct left extensions `u` with `c(u v w) > 0`, except that
//! bigrams starting with `<s>` keep their raw count (they cannot be extended
//! to the left); a unigram `w` uses the number of distinct `v` with an
//! observed bigram `(v, w)`.
//!
//! At every order, with adjusted counts `a` and per-order discounts,
//!
//! ```text
//! p(w|h) = (a(h w) - D(a(h w))) / a(h .) + gamma(h) * p(w|h')
//! gamma(h) = (D1 N1(h .) + D2 N2(h .) + D3 N3+(h .)) / a(h .)
//! ```
//!
//! and the unigram level interpolates with the uniform distribution over
//! every predictable vocabulary word (everything except `<s>`). Because the
//! model is interpolated, the ARPA back-off weight of a history is exactly
//! `gamma(h)`.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, BOS, EOS};

use super::counts::count_trigrams;
use super::{NGramEntry, NGramModel, WordId, LOG_ZERO};

/// Discount used when the count-of-counts formula is undefined.
pub const FALLBACK_DISCOUNT: f64 = 0.75;

/// Chen-Goodman discounts `[D1, D2, D3+]` from count-of-counts `n[k-1] = n_k`.
///
/// `D_k` depends on `n_1`, `n_k` and `n_{k+1}`; if any of those is zero, or
/// the formula lands outside `(0, k]`, that discount falls back to
/// [`FALLBACK_DISCOUNT`].
pub fn modified_kn_discounts(n: [u64; 4]) -> [f64; 3] {
    let [n1, n2, n3, n4] = n.map(|c| c as f64);
    let y = if n1 > 0.0 { n1 / (n1 + 2.0 * n2) } else { f64::NAN };
    let raw = [
        (n1 > 0.0 && n2 > 0.0).then(|| 1.0 - 2.0 * y * n2 / n1),
        (n1 > 0.0 && n2 > 0.0 && n3 > 0.0).then(|| 2.0 - 3.0 * y * n3 / n2),
        (n1 > 0.0 && n3 > 0.0 && n4 > 0.0).then(|| 3.0 - 4.0 * y * n4 / n3),
    ];
    let mut out = [FALLBACK_DISCOUNT; 3];
    for (k, d) in raw.into_iter().enumerate() {
        if let Some(d) = d {
            if d > 0.0 && d <= (k + 1) as f64 {
                out[k] = d;
            }
        }
    }
    out
}

fn count_of_counts<'a>(counts: impl Iterator<Item = &'a u64>) -> [u64; 4] {
    let mut n = [0u64; 4];
    for &c in counts {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    n
}

#[derive(Clone, Copy)]
struct Discounts([f64; 3]);

impl Discounts {
    fn of(&self, count: u64) -> f64 {
        match count {
            0 => 0.0,
            1 => self.0[0],
            2 => self.0[1],
            _ => self.0[2],
        }
    }
}

/// Per-history totals: adjusted-count sum and the discounted mass.
#[derive(Default, Clone, Copy)]
struct HistoryMass {
    total: u64,
    n: [u64; 3],
}

impl HistoryMass {
    fn add(&mut self, count: u64) {
        self.total += count;
        self.n[(count.min(3) - 1) as usize] += 1;
    }

    fn split(&self, d: &Discounts) -> (f64, f64) {
        let total = self.total as f64;
        let mass = d.0[0] * self.n[0] as f64 + d.0[1] * self.n[1] as f64 + d.0[2] * self.n[2] as f64;
        (total, mass / total)
    }
}

/// Trains an interpolated modified Kneser-Ney trigram model on `corpus`.
/// Every word of `vocab` gets a unigram; `<s>` gets [`LOG_ZERO`].
pub fn train_kneser_ney(corpus: &Corpus, vocab: &Vocabulary) -> Result<NGramModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let words: Vec<String> = vocab.iter().map(str::to_string).collect();
    let mut model = NGramModel::empty(3, words);
    let bos = model.word_id(BOS).expect("vocabulary always holds <s>");
    let eos = model.word_id(EOS).expect("vocabulary always holds </s>");

    let mut sentences = Vec::with_capacity(corpus.len());
    for s in corpus.sentences() {
        let ids: Result<Vec<WordId>> = s
            .iter()
            .map(|w| {
                model
                    .word_id(w)
                    .ok_or_else(|| Error::NotInVocabulary { word: w.clone() })
            })
            .collect();
        sentences.push(ids?);
    }

    let tri = count_trigrams(&sentences, bos, eos);
    drop(sentences);

    let mut bi: HashMap<[WordId; 2], u64> = HashMap::with_capacity(tri.len() / 2);
    for (&[_, v, w], &c) in &tri {
        *bi.entry([v, w]).or_insert(0) += if v == bos { c } else { 1 };
    }
    let mut uni: HashMap<WordId, u64> = HashMap::new();
    for &[_, w] in bi.keys() {
        *uni.entry(w).or_insert(0) += 1;
    }

    let d3 = Discounts(modified_kn_discounts(count_of_counts(tri.values())));
    let d2 = Discounts(modified_kn_discounts(count_of_counts(bi.values())));
    let d1 = Discounts(modified_kn_discounts(count_of_counts(uni.values())));
    log::debug!("discounts: 1={:?} 2={:?} 3={:?}", d1.0, d2.0, d3.0);

    // unigrams
    let mut mass1 = HistoryMass::default();
    for &c in uni.values() {
        mass1.add(c);
    }
    let (total1, gamma0) = mass1.split(&d1);
    let n_predicted = model.predicted_ids().count() as f64;
    let mut p1 = vec![0.0f64; model.words().len()];
    for id in model.predicted_ids() {
        let a = uni.get(&id).copied().unwrap_or(0);
        p1[id as usize] = (a as f64 - d1.of(a)) / total1 + gamma0 / n_predicted;
    }
    for (id, &p) in p1.iter().enumerate() {
        let id = id as WordId;
        let lp = if id == bos || p <= 0.0 { LOG_ZERO } else { p.log10() };
        model.insert(&[id], NGramEntry::new(lp));
    }

    // bigrams
    let mut mass2: BTreeMap<WordId, HistoryMass> = BTreeMap::new();
    for (&[v, _], &c) in &bi {
        mass2.entry(v).or_default().add(c);
    }
    let gamma2: HashMap<WordId, (f64, f64)> =
        mass2.iter().map(|(&v, m)| (v, m.split(&d2))).collect();
    let mut p2: HashMap<[WordId; 2], f64> = HashMap::with_capacity(bi.len());
    for (&[v, w], &c) in &bi {
        let (total, gamma) = gamma2[&v];
        let p = (c as f64 - d2.of(c)) / total + gamma * p1[w as usize];
        p2.insert([v, w], p);
        model.insert(&[v, w], NGramEntry::new(p.log10()));
    }
    for (&v, &(_, gamma)) in &gamma2 {
        model.entry_mut(&[v]).expect("unigram exists").backoff = Some(gamma.log10());
    }

    // trigrams
    let mut mass3: HashMap<[WordId; 2], HistoryMass> = HashMap::new();
    for (&[u, v, _], &c) in &tri {
        mass3.entry([u, v]).or_default().add(c);
    }
    let gamma3: HashMap<[WordId; 2], (f64, f64)> =
        mass3.iter().map(|(&h, m)| (h, m.split(&d3))).collect();
    for (&[u, v, w], &c) in &tri {
        let (total, gamma) = gamma3[&[u, v]];
        let p = (c as f64 - d3.of(c)) / total + gamma * p2[&[v, w]];
        model.insert(&[u, v, w], NGramEntry::new(p.log10()));
    }
    // (<s>, <s>) is a history but never an event.
    model.insert(&[bos, bos], NGramEntry::new(LOG_ZERO));
    for (&h, &(_, gamma)) in &gamma3 {
        model.entry_mut(&h).expect("trigram history is a bigram").backoff = Some(gamma.log10());
    }

    Ok(model)
}
