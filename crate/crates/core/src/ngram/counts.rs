use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::vocab::{BOS, EOS};

use super::WordId;

/// Raw n-gram counts of length `order` (1..=3).
///
/// Each sentence is padded as `<s> <s> w1 .. wn </s>` and every position
/// after the two begin markers is one event, so `<s>` is never predicted.
pub fn count_ngrams(corpus: &Corpus, order: usize) -> BTreeMap<Vec<String>, u64> {
    assert!((1..=3).contains(&order), "order must be 1..=3");
    let mut out: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for sentence in corpus.sentences() {
        let mut padded: Vec<&str> = Vec::with_capacity(sentence.len() + 3);
        padded.extend([BOS, BOS]);
        padded.extend(sentence.iter().map(String::as_str));
        padded.push(EOS);
        for i in 2..padded.len() {
            let key = padded[i + 1 - order..=i].iter().map(|s| s.to_string()).collect();
            *out.entry(key).or_insert(0) += 1;
        }
    }
    out
}

/// Trigram counts over id-mapped, padded sentences. Shards are counted in
/// parallel; merging is a commutative sum, so the result does not depend on
/// scheduling.
pub(crate) fn count_trigrams(sentences: &[Vec<WordId>], bos: WordId, eos: WordId) -> HashMap<[WordId; 3], u64> {
    sentences
        .par_chunks(4096)
        .map(|chunk| {
            let mut local: HashMap<[WordId; 3], u64> = HashMap::new();
            for s in chunk {
                let (mut u, mut v) = (bos, bos);
                for &w in s.iter().chain(std::iter::once(&eos)) {
                    *local.entry([u, v, w]).or_insert(0) += 1;
                    u = v;
                    v = w;
                }
            }
            local
        })
        .reduce(HashMap::new, |a, b| if a.len() >= b.len() { merge(a, b) } else { merge(b, a) })
}

fn merge(mut a: HashMap<[WordId; 3], u64>, b: HashMap<[WordId; 3], u64>) -> HashMap<[WordId; 3], u64> {
    for (k, c) in b {
        *a.entry(k).or_insert(0) += c;
    }
    a
}
