//! Kneser-Ney trigram training, SRILM-style perplexity evaluation, and
//! approximation of autoregressive subword models into n-gram form.

pub mod approx;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod error;
pub mod interp;
pub mod ngram;
pub mod protocol;
pub mod sampling;
pub mod source;
pub mod synthetic;
pub mod tokenizer;
pub mod vocab;

pub use corpus::{load_corpus, subsample, Corpus};
pub use approx::{pba_build, sba_build, word_prob, LabeledModel, PbaContext, PbaReport, WordProb};
pub use error::{Error, Result};
pub use eval::{evaluate, word_ppl_from_subword, PerplexityReport};
pub use interp::{mixture_score, static_merge, tune_weights_em, EmOptions, EmOutcome, Mixture};
pub use ngram::arpa::{read_arpa, write_arpa};
pub use ngram::{count_ngrams, normalization_report, train_kneser_ney, LanguageModel, NGramEntry, NGramModel};
pub use sampling::{filter_and_truncate, generate_corpus, sample_sentence, Distribution, GeneratedCorpus, SamplerConfig};
pub use source::{CharMarkovSource, NGramTeacher, PerturbedSource, TokenSource};
pub use tokenizer::{CharTokenizer, Spacing, SubwordTokenizer, TokenId, WordTokenizer};
pub use vocab::{build_restricted_token_set, build_vocabulary, RestrictedTokenSet, Vocabulary};
