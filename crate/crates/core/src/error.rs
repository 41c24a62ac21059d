use std::path::PathBuf;

use thiserror::Error;

use crate::ngram::arpa::ArpaError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: invalid UTF-8 in corpus")]
    Utf8 { path: PathBuf, line: usize },

    #[error("{location}: reserved marker {token:?} may not appear in corpus text")]
    ReservedToken { location: String, token: String },

    #[error("no corpora given")]
    NoCorpora,

    #[error("sample size {requested} out of range 1..={available}")]
    SampleSize { requested: usize, available: usize },

    #[error("cannot train on an empty corpus")]
    EmptyCorpus,

    #[error("word {word:?} is not in the model vocabulary")]
    NotInVocabulary { word: String },

    #[error("tokenizer failed on {word:?}: {reason}")]
    Tokenize { word: String, reason: String },

    #[error("token id {id} cannot be decoded")]
    Detokenize { id: u32 },

    #[error(transparent)]
    Arpa(#[from] ArpaError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("restriction leaves no support after context of {context_len} tokens")]
    EmptySupport { context_len: usize },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("every component assigns zero probability to {word:?} in dev sentence {sentence}")]
    ZeroProbabilityEvent { sentence: usize, word: String },

    #[error("mixture needs at least two components with matching weights")]
    MixtureShape,

    #[error("numeric pathology while renormalizing history {history:?}: {detail}")]
    Normalization { history: Vec<String>, detail: String },

    #[error("source produced {0} consecutive empty sentences")]
    Stalled(usize),

    #[error("perplexity over zero words")]
    NoWords,

    #[error("adapter protocol: {0}")]
    Protocol(String),

    #[error("adapter returned error {code}: {message}")]
    Adapter { code: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
