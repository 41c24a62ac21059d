//! Sentence-per-line corpora.
//!
//! Files are UTF-8, one sentence per line, tokens separated by whitespace.
//! Nothing is normalized: tokens are kept byte-for-byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::vocab::is_reserved;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub name: String,
    sentences: Vec<Vec<String>>,
}

impl Corpus {
    /// Builds a corpus from already tokenized sentences. Empty sentences are dropped.
    pub fn from_sentences<I, S, W>(name: impl Into<String>, sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = W>,
        W: Into<String>,
    {
        let name = name.into();
        let mut out = Vec::new();
        for (idx, sentence) in sentences.into_iter().enumerate() {
            let mut tokens = Vec::new();
            for token in sentence {
                let token: String = token.into();
                if token.is_empty() || token.chars().any(char::is_whitespace) {
                    return Err(Error::Config(format!(
                        "{name}: sentence {idx} has an empty or whitespace-bearing token"
                    )));
                }
                if is_reserved(&token) {
                    return Err(Error::ReservedToken {
                        location: format!("{name}: sentence {idx}"),
                        token,
                    });
                }
                tokens.push(token);
            }
            if !tokens.is_empty() {
                out.push(tokens);
            }
        }
        Ok(Corpus {
            name,
            sentences: out,
        })
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let name = name.into();
        let mut sentences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut tokens = Vec::new();
            for tok in line.split_whitespace() {
                if is_reserved(tok) {
                    return Err(Error::ReservedToken {
                        location: format!("{name}:{}", lineno + 1),
                        token: tok.to_string(),
                    });
                }
                tokens.push(tok.to_string());
            }
            if !tokens.is_empty() {
                sentences.push(tokens);
            }
        }
        Ok(Corpus { name, sentences })
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// The first sentences whose running word count reaches `words`.
    pub fn prefix_by_words(&self, words: usize) -> Corpus {
        let mut taken = 0;
        let mut out = Vec::new();
        for s in &self.sentences {
            if taken >= words {
                break;
            }
            taken += s.len();
            out.push(s.clone());
        }
        Corpus {
            name: self.name.clone(),
            sentences: out,
        }
    }

    pub fn concat(name: impl Into<String>, parts: &[&Corpus]) -> Corpus {
        Corpus {
            name: name.into(),
            sentences: parts
                .iter()
                .flat_map(|c| c.sentences.iter().cloned())
                .collect(),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = match String::from_utf8(bytes) {
        Ok(t) => t,
        Err(e) => {
            let valid = e.utf8_error().valid_up_to();
            let line = e.as_bytes()[..valid].iter().filter(|&&b| b == b'\n').count() + 1;
            return Err(Error::Utf8 {
                path: path.to_path_buf(),
                line,
            });
        }
    };
    let corpus = Corpus::parse(name, &text)?;
    log::debug!(
        "loaded {}: {} sentences, {} tokens",
        path.display(),
        corpus.len(),
        corpus.word_count()
    );
    Ok(corpus)
}

/// Uniform sample of `n` sentences without replacement, kept in corpus order.
pub fn subsample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    let available = corpus.len();
    if n == 0 || n > available {
        return Err(Error::SampleSize {
            requested: n,
            available,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, available, n).into_vec();
    picked.sort_unstable();
    Ok(Corpus {
        name: format!("{}@{n}/{seed}", corpus.name),
        sentences: picked
            .into_iter()
            .map(|i| corpus.sentences[i].clone())
            .collect(),
    })
}
