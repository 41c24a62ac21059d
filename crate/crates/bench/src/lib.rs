//! Shared inputs for the benchmarks.

use lmdistill::synthetic::SyntheticDomain;
use lmdistill::Corpus;

pub fn domain() -> SyntheticDomain {
    SyntheticDomain::new(300, 20, 6, 1.0, 10.0, 11)
}

pub fn corpus(sentences: usize, seed: u64) -> Corpus {
    domain().sample("bench", sentences, seed).expect("valid domain")
}
