//! Synthetic text domains for benchmarks that need a known generator.
//!
//! A domain is a sparse second-order Markov chain over `vocab_size` words.
//! Every word `v` owns a pool of `pool` candidate successors; a history
//! `(u, v)` picks `branching` of them with Zipf weights `1/(j+1)^sharpness`.
//! Sentences end after each word with probability `1/mean_len`. Nothing is
//! stored: transition rows are recomputed from hashes of the history.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomain {
    pub vocab_size: usize,
    pub pool: usize,
    pub branching: usize,
    pub sharpness: f64,
    pub mean_len: f64,
    pub seed: u64,
    /// Fraction of histories whose successors are redrawn, and the seed
    /// used for them; models a related but different domain.
    #[serde(default)]
    pub shift: Option<(f64, u64)>,
}

const START: u64 = u64::MAX;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn h3(a: u64, b: u64, c: u64, d: u64) -> u64 {
    mix(mix(mix(mix(a) ^ b) ^ c) ^ d)
}

impl SyntheticDomain {
    pub fn new(vocab_size: usize, pool: usize, branching: usize, sharpness: f64, mean_len: f64, seed: u64) -> Self {
        SyntheticDomain {
            vocab_size,
            pool,
            branching,
            sharpness,
            mean_len,
            seed,
            shift: None,
        }
    }

    /// The same domain with a fraction of its histories redrawn.
    pub fn shifted(&self, fraction: f64, seed: u64) -> Self {
        SyntheticDomain {
            shift: Some((fraction, seed)),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.pool == 0 || self.branching == 0 || self.pool > self.vocab_size {
            return Err(Error::Config(format!("degenerate synthetic domain {self:?}")));
        }
        if !(self.mean_len >= 1.0) || !(self.sharpness >= 0.0) {
            return Err(Error::Config("mean_len must be >= 1 and sharpness >= 0".into()));
        }
        Ok(())
    }

    pub fn word(i: usize) -> String {
        format!("w{i}")
    }

    /// Successor row of history `(u, v)` as `(word index, weight)` pairs.
    pub fn successors(&self, u: u64, v: u64) -> Vec<(usize, f64)> {
        let row_seed = match self.shift {
            Some((f, s)) if (h3(s, u, v, 1) >> 11) as f64 / (1u64 << 53) as f64 <= f => s,
            _ => self.seed,
        };
        (0..self.branching)
            .map(|j| {
                let slot = h3(row_seed, u, v, j as u64) % self.pool as u64;
                let word = h3(self.seed, v, slot, 2) % self.vocab_size as u64;
                (word as usize, 1.0 / ((j + 1) as f64).powf(self.sharpness))
            })
            .collect()
    }

    fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<String> {
        let (mut u, mut v) = (START, START);
        let mut out = Vec::new();
        let p_end = 1.0 / self.mean_len;
        loop {
            let row = self.successors(u, v);
            let total: f64 = row.iter().map(|r| r.1).sum();
            let mut x = rng.gen::<f64>() * total;
            let mut pick = row[row.len() - 1].0;
            for &(w, wt) in &row {
                if x < wt {
                    pick = w;
                    break;
                }
                x -= wt;
            }
            out.push(Self::word(pick));
            (u, v) = (v, pick as u64);
            if out.len() >= 200 || rng.gen::<f64>() < p_end {
                return out;
            }
        }
    }

    /// `n` sentences from a ChaCha20 stream seeded with `seed`.
    pub fn sample(&self, name: &str, n: usize, seed: u64) -> Result<Corpus> {
        self.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sentences: Vec<Vec<String>> = (0..n).map(|_| self.sentence(&mut rng)).collect();
        Corpus::from_sentences(name, sentences)
    }
}

/// Train, dev and test splits plus a large held-in corpus for a teacher.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub held_in: Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub held_in: usize,
}

impl Benchmark {
    /// Draws every split from its own stream of `seed`. `held_from`
    /// produces the held-in corpus; pass the domain itself or a shifted
    /// copy.
    pub fn draw(domain: &SyntheticDomain, held_from: &SyntheticDomain, splits: Splits, seed: u64) -> Result<Self> {
        Ok(Benchmark {
            train: domain.sample("train", splits.train, mix(seed ^ 1))?,
            dev: domain.sample("dev", splits.dev, mix(seed ^ 2))?,
            test: domain.sample("test", splits.test, mix(seed ^ 3))?,
            held_in: held_from.sample("held-in", splits.held_in, mix(seed ^ 4))?,
        })
    }
}
