use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "lmdistill", version, about = "Kneser-Ney trigram models, evaluation and n-gram approximation of token sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an interpolated modified Kneser-Ney trigram model.
    Train(TrainArgs),
    /// Perplexity of a model, or of a fixed-weight mixture, on a corpus.
    Eval(EvalArgs),
    /// Tune mixture weights by EM on a dev corpus.
    Interp(InterpArgs),
    /// Statically merge weighted models into one ARPA model.
    Merge(MergeArgs),
    /// Probability-based approximation onto a baseline model's n-grams.
    Pba(PbaArgs),
    /// Generate a corpus from a token source.
    Sample(SampleArgs),
    /// Student perplexity against generated volume (config driven).
    SweepVolume(ConfigArgs),
    /// Few-shot sweep over sub-sampled training sets (config driven).
    SweepFewshot(ConfigArgs),
    /// Serve an ARPA model as a token source over stdin/stdout.
    ServeTeacher(ServeArgs),
    /// Word-level perplexity from a subword log-probability file.
    WordPpl(WordPplArgs),
    /// Write the restricted token-id file for a vocabulary.
    Restrict(RestrictArgs),
    /// Write a synthetic benchmark (train/dev/test/held-in) and a config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Extra corpora whose words join the vocabulary without being trained on.
    #[arg(long = "vocab-from")]
    vocab_from: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Repeat to evaluate a mixture (needs --weights or --weight).
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    /// `name<TAB>weight` file as written by `interp`.
    #[arg(long, conflicts_with = "weight")]
    weights: Option<PathBuf>,
    #[arg(long)]
    weight: Vec<f64>,
    /// Retrain on this corpus with the test words added to the vocabulary,
    /// so that the test set has no OOVs.
    #[arg(long = "inject-test-vocab", value_name = "TRAIN")]
    inject_test_vocab: Option<PathBuf>,
    /// Write key=value records here as well.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InterpArgs {
    #[arg(long = "model", required = true, num_args = 1)]
    models: Vec<PathBuf>,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long = "weights-out")]
    weights_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 100)]
    max_iters: usize,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long, conflicts_with = "weight")]
    weights: Option<PathBuf>,
    #[arg(long)]
    weight: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
pub struct SourceArgs {
    /// ARPA model used as a word-level teacher.
    #[arg(long = "teacher-arpa", conflicts_with = "adapter")]
    teacher_arpa: Option<PathBuf>,
    /// Weight of a uniform model merged into the ARPA teacher.
    #[arg(long, default_value_t = 0.0)]
    flatten: f64,
    /// Program speaking the NDJSON token-source protocol on stdio.
    #[arg(long)]
    adapter: Option<String>,
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    adapter_args: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextMode {
    Full,
    Ngram,
}

#[derive(Args)]
struct PbaArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    context: ContextMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Corpus whose word count sets the target size.
    #[arg(long, required_unless_present = "train_words")]
    train: Option<PathBuf>,
    #[arg(long = "train-words", conflicts_with = "train")]
    train_words: Option<usize>,
    #[arg(long, default_value_t = 100.0)]
    multiplier: f64,
    #[arg(long = "top-p", default_value_t = 0.95)]
    top_p: f64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Token-id file from `restrict`.
    #[arg(long)]
    restriction: Option<PathBuf>,
    #[arg(long = "max-tokens", default_value_t = 512)]
    max_tokens: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    shards: usize,
    /// Also train a Kneser-Ney student on the output and write it here.
    #[arg(long)]
    student: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    arpa: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    flatten: f64,
}

#[derive(Args)]
struct WordPplArgs {
    #[arg(long)]
    logprobs: PathBuf,
    /// Count end-of-text records as an extra event per sentence.
    #[arg(long = "include-end")]
    include_end: bool,
}

#[derive(Args)]
struct RestrictArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Use the built-in character tokenizer.
    #[arg(long, conflicts_with_all = ["teacher_arpa", "adapter"])]
    chars: bool,
    #[arg(long = "vocab-from", required = true)]
    vocab_from: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 300)]
    vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    pool: usize,
    #[arg(long, default_value_t = 6)]
    branching: usize,
    #[arg(long, default_value_t = 1.0)]
    sharpness: f64,
    #[arg(long = "mean-len", default_value_t = 10.0)]
    mean_len: f64,
    #[arg(long = "domain-seed", default_value_t = 11)]
    domain_seed: u64,
    /// Fraction of histories redrawn for the held-in corpus.
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 500)]
    dev: usize,
    #[arg(long, default_value_t = 500)]
    test: usize,
    #[arg(long = "held-in", default_value_t = 20000)]
    held_in: usize,
    #[arg(long)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Interp(a) => commands::interp(a),
        Command::Merge(a) => commands::merge(a),
        Command::Pba(a) => commands::pba(a),
        Command::Sample(a) => commands::sample(a),
        Command::SweepVolume(a) => commands::sweep_volume(a),
        Command::SweepFewshot(a) => commands::sweep_fewshot(a),
        Command::ServeTeacher(a) => commands::serve_teacher(a),
        Command::WordPpl(a) => commands::word_ppl(a),
        Command::Restrict(a) => commands::restrict(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
