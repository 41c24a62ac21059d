//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use lmdistill::Corpus;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Brute-force interpolated modified Kneser-Ney over strings, written
/// straight from the count definitions and kept deliberately naive.
pub struct KnOracle {
    /// Predictable words: the vocabulary without `<s>`.
    predicted: Vec<String>,
    adjusted: [HashMap<Vec<String>, u64>; 3],
    discounts: [[f64; 3]; 3],
}

fn discounts(counts: &HashMap<Vec<String>, u64>) -> [f64; 3] {
    let n = |k: u64| counts.values().filter(|&&c| c == k).count() as f64;
    let (n1, n2, n3, n4) = (n(1), n(2), n(3), n(4));
    let mut out = [0.75; 3];
    if n1 == 0.0 {
        return out;
    }
    let y = n1 / (n1 + 2.0 * n2);
    let cands = [(n2, n1, 1.0), (n3, n2, 2.0), (n4, n3, 3.0)];
    for (k, &(next, cur, kk)) in cands.iter().enumerate() {
        if next > 0.0 && cur > 0.0 {
            let d = kk - (kk + 1.0) * y * next / cur;
            if d > 0.0 && d <= kk {
                out[k] = d;
            }
        }
    }
    out
}

impl KnOracle {
    pub fn train(sentences: &[Vec<String>], vocab: &BTreeSet<String>) -> Self {
        let mut tri: HashMap<Vec<String>, u64> = HashMap::new();
        for s in sentences {
            let mut p = vec![BOS.to_string(), BOS.to_string()];
            p.extend(s.iter().cloned());
            p.push(EOS.to_string());
            for i in 2..p.len() {
                *tri.entry(p[i - 2..=i].to_vec()).or_insert(0) += 1;
            }
        }
        // bigram (v, w): distinct u preceding it, or the raw count after <s>
        let mut left: HashMap<Vec<String>, BTreeSet<String>> = HashMap::new();
        let mut raw: HashMap<Vec<String>, u64> = HashMap::new();
        for (k, &c) in &tri {
            left.entry(k[1..].to_vec()).or_default().insert(k[0].clone());
            *raw.entry(k[1..].to_vec()).or_insert(0) += c;
        }
        let bi: HashMap<Vec<String>, u64> = left
            .iter()
            .map(|(k, us)| {
                let c = if k[0] == BOS { raw[k] } else { us.len() as u64 };
                (k.clone(), c)
            })
            .collect();
        let mut uni_left: HashMap<Vec<String>, BTreeSet<String>> = HashMap::new();
        for k in bi.keys() {
            uni_left.entry(vec![k[1].clone()]).or_default().insert(k[0].clone());
        }
        let uni: HashMap<Vec<String>, u64> = uni_left.into_iter().map(|(k, s)| (k, s.len() as u64)).collect();
        let discounts = [discounts(&uni), discounts(&bi), discounts(&tri)];
        KnOracle {
            predicted: vocab.iter().filter(|w| *w != BOS).cloned().collect(),
            adjusted: [uni, bi, tri],
            discounts,
        }
    }

    fn d(&self, order: usize, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.discounts[order - 1][0],
            2 => self.discounts[order - 1][1],
            _ => self.discounts[order - 1][2],
        }
    }

    /// p(w | history), history oldest first, at most two words used.
    pub fn prob(&self, history: &[&str], w: &str) -> f64 {
        let h: Vec<String> = history[history.len().saturating_sub(2)..].iter().map(|s| s.to_string()).collect();
        let order = h.len() + 1;
        let table = &self.adjusted[order - 1];
        let mut total = 0u64;
        let mut n = [0u64; 3];
        let mut own = 0u64;
        for (k, &c) in table {
            if k[..h.len()] == h[..] {
                total += c;
                n[(c.min(3) - 1) as usize] += 1;
                if k[h.len()] == w {
                    own = c;
                }
            }
        }
        let lower = if h.is_empty() {
            1.0 / self.predicted.len() as f64
        } else {
            self.prob(&history[history.len() - h.len() + 1..], w)
        };
        if total == 0 {
            return lower;
        }
        let dd = &self.discounts[order - 1];
        let gamma = (dd[0] * n[0] as f64 + dd[1] * n[1] as f64 + dd[2] * n[2] as f64) / total as f64;
        (own as f64 - self.d(order, own)) / total as f64 + gamma * lower
    }

    pub fn predicted(&self) -> &[String] {
        &self.predicted
    }
}

/// Random corpus over `w0..w{k-1}` with a skewed word distribution.
pub fn random_corpus(seed: u64, max_sentences: usize, max_words: usize) -> Corpus {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=max_words);
    let n = rng.gen_range(1..=max_sentences);
    let sentences: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=8);
            (0..len)
                .map(|_| {
                    let x: f64 = rng.gen();
                    format!("w{}", ((x * x) * k as f64) as usize)
                })
                .collect()
        })
        .collect();
    Corpus::from_sentences(format!("random-{seed}"), sentences).unwrap()
}

/// Largest |log10 model - log10 oracle| over every history in
/// `(V ∪ {<s>})^2` and every predictable word.
pub fn max_kn_deviation(model: &lmdistill::NGramModel, oracle: &KnOracle, vocab: &BTreeSet<String>) -> f64 {
    use lmdistill::LanguageModel;
    let mut worst: f64 = 0.0;
    let hist: Vec<&str> = vocab.iter().map(String::as_str).collect();
    for &u in &hist {
        for &v in &hist {
            for w in oracle.predicted() {
                let got = model.log10_prob(&[u, v], w);
                let want = oracle.prob(&[u, v], w).log10();
                worst = worst.max((got - want).abs());
            }
        }
    }
    for w in oracle.predicted() {
        worst = worst.max((model.log10_prob(&[], w) - oracle.prob(&[], w).log10()).abs());
    }
    worst
}

/// Vocabulary of a corpus plus the markers and `extra` unseen words.
pub fn vocab_with(corpus: &Corpus, extra: usize) -> BTreeSet<String> {
    let mut v: BTreeSet<String> = corpus.words().map(str::to_string).collect();
    for m in [BOS, EOS, UNK] {
        v.insert(m.to_string());
    }
    for i in 0..extra {
        v.insert(format!("unseen{i}"));
    }
    v
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// `key<TAB>value` lines of a fixture; `sentence` keys are collected.
pub fn read_expected(name: &str) -> (Vec<String>, BTreeMap<String, String>) {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    let mut sentences = Vec::new();
    let mut values = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let (k, v) = line.split_once('\t').unwrap();
        if k == "sentence" {
            sentences.push(v.to_string());
        } else {
            values.insert(k.to_string(), v.to_string());
        }
    }
    (sentences, values)
}

pub type KindCheck = fn(&lmdistill::ngram::arpa::ArpaErrorKind) -> bool;

/// Malformed ARPA fixtures with the line each error must point at.
pub fn malformed_cases() -> Vec<(&'static str, usize, KindCheck)> {
    use lmdistill::ngram::arpa::ArpaErrorKind as K;
    vec![
        ("bad_missing_data.arpa", 2, |k| matches!(k, K::MissingData)),
        ("bad_count_mismatch.arpa", 16, |k| {
            matches!(k, K::CountMismatch { order: 2, declared: 3, found: 2 })
        }),
        ("bad_number.arpa", 9, |k| matches!(k, K::NotANumber(f) if f == "-0.5x")),
        ("bad_field_count.arpa", 13, |k| matches!(k, K::FieldCount { expected: 2, found: 2 })),
        ("bad_unknown_word.arpa", 14, |k| matches!(k, K::UnknownWord(w) if w == "b")),
        ("bad_missing_end.arpa", 14, |k| matches!(k, K::MissingEnd)),
    ]
}
