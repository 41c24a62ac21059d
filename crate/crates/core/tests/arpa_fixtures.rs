mod support;

use lmdistill::ngram::arpa::{parse_arpa, to_arpa_string};
use lmdistill::{read_arpa, train_kneser_ney, write_arpa, LanguageModel, NGramModel, Vocabulary};
use support::{fixture, malformed_cases, random_corpus, vocab_with};

/// Largest score difference over all entries of `a` and a few backed-off
/// queries built from its vocabulary.
fn max_score_gap(a: &NGramModel, b: &NGramModel) -> f64 {
    let words: Vec<&str> = a.words().iter().map(String::as_str).collect();
    let mut worst: f64 = 0.0;
    for &u in &words {
        for &v in &words {
            for &w in &words {
                worst = worst.max((a.log10_prob(&[u, v], w) - b.log10_prob(&[u, v], w)).abs());
            }
        }
    }
    worst
}

#[test]
fn fixture_models_round_trip() {
    for name in ["valid_small.arpa", "backoff3.arpa"] {
        let m = read_arpa(fixture(name)).unwrap();
        let again = parse_arpa(&to_arpa_string(&m)).unwrap();
        assert!(max_score_gap(&m, &again) <= 1e-6, "{name}");
        assert_eq!(to_arpa_string(&m), to_arpa_string(&again));
    }
}

#[test]
fn trained_models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let c = random_corpus(seed, 40, 20);
        let m = train_kneser_ney(&c, &Vocabulary::from_words(vocab_with(&c, 1).iter())).unwrap();
        let p = dir.path().join(format!("m{seed}.arpa"));
        write_arpa(&m, &p).unwrap();
        let back = read_arpa(&p).unwrap();
        assert_eq!(max_score_gap(&m, &back), 0.0);
    }
}

#[test]
fn malformed_fixtures_report_the_offending_line() {
    let cases = malformed_cases();
    for (name, line, kind) in cases {
        let text = std::fs::read_to_string(fixture(name)).unwrap();
        let e = parse_arpa(&text).expect_err(name);
        assert_eq!(e.line, line, "{name}: {e}");
        assert!(kind(&e.kind), "{name}: {e}");
    }
}

#[test]
fn file_errors_carry_the_line() {
    let e = read_arpa(fixture("bad_number.arpa")).unwrap_err().to_string();
    assert!(e.contains("line 9"), "{e}");
}
