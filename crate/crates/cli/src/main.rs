//! `postscore`: command-line front end for the post-scoring pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
//! failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "postscore",
    version,
    about = "Predict user outcomes from their short texts"
)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a planted signal.
    Synth(SynthArgs),
    /// Per-user surface features (capitalization, emoji, entropy, ...).
    Featurize(FeaturizeArgs),
    /// Correlate surface features with labels.
    Correlate(CorrelateArgs),
    /// Fit a post-level linear model.
    Train(TrainArgs),
    /// Leave-one-user-out cross-validated correlation.
    Evaluate(EvaluateArgs),
    /// Per-user predictions from a trained model.
    Predict(PredictArgs),
    /// Institution means of user predictions, compared to reference scores.
    Aggregate(AggregateArgs),
    /// Score and rank every word in the embedding table.
    RankWords(RankWordsArgs),
    /// Correlation as a function of posts per user.
    Curve(CurveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorizerKind {
    Embedding,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CountSourceArg {
    Training,
    Sidecar,
}

/// Where outputs go. Not recorded in the manifest, so reruns into
/// different directories produce identical manifests.
#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub topics: usize,
    #[arg(long, default_value_t = 300)]
    pub users: usize,
    #[arg(long, default_value_t = 20)]
    pub posts_per_user: usize,
    #[arg(long, default_value_t = 20)]
    pub tokens_per_post: usize,
    /// Label noise sd in score units (scores have sd 100).
    #[arg(long, default_value_t = 71.414)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 20)]
    pub institutions: usize,
    #[arg(long, default_value_t = 25)]
    pub users_per_institution: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    /// Posts as JSON lines.
    #[arg(long)]
    pub posts: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    #[arg(long)]
    pub posts: PathBuf,
    /// `user_id,score` CSV.
    #[arg(long)]
    pub labels: PathBuf,
}

/// How posts become vectors; shared by train, evaluate and curve.
#[derive(Debug, Args, Serialize)]
pub struct VectorizerArgs {
    #[arg(long, value_enum, default_value_t = VectorizerKind::Embedding)]
    pub vectorizer: VectorizerKind,
    /// Text-format word vectors (required for the embedding vectorizer).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Stopwords for TF-IDF, one per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// TF-IDF vocabulary size.
    #[arg(long, default_value_t = 1000)]
    pub tfidf_terms: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub vectorizer: VectorizerArgs,
    /// Ridge penalty (0 = ordinary least squares).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub vectorizer: VectorizerArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub posts: PathBuf,
    /// Word vectors, for embedding models.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Vocabulary CSV written by `train`, for TF-IDF models.
    #[arg(long)]
    pub tfidf_vocab: Option<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    /// `user_id,predicted,n_posts_used` CSV written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// `user_id,institution_id` CSV.
    #[arg(long)]
    pub mapping: PathBuf,
    /// `institution_id,score` CSV of external scores.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Predictions from a second source, compared institution by institution.
    #[arg(long)]
    pub predictions_b: Option<PathBuf>,
    #[arg(long, default_value_t = postscore::transfer::DEFAULT_MIN_USERS)]
    pub min_users: usize,
    /// Users to leave out (one id per line), e.g. the training users.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RankWordsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Drop words seen fewer times than this.
    #[arg(long, default_value_t = 0)]
    pub min_count: u64,
    #[arg(long, value_enum, default_value_t = CountSourceArg::Training)]
    pub count_source: CountSourceArg,
    /// Training posts, for `--count-source training`.
    #[arg(long)]
    pub posts: Option<PathBuf>,
    /// `word,count` CSV, for `--count-source sidecar`.
    #[arg(long)]
    pub freq: Option<PathBuf>,
    /// Export only the top and bottom N words.
    #[arg(long)]
    pub top: Option<usize>,
    /// Also export 2-D PCA coordinates of the exported words (needs --top).
    #[arg(long)]
    pub project_2d: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
    #[arg(long)]
    pub posts: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] postscore::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // Builder::new() ignores the environment on purpose.
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(cli.verbose);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: cannot start thread pool: {e}");
        return ExitCode::from(1);
    }
    let threads = rayon::current_num_threads();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, threads),
        Command::Featurize(a) => commands::featurize(a, threads),
        Command::Correlate(a) => commands::correlate(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Evaluate(a) => commands::evaluate(a, threads),
        Command::Predict(a) => commands::predict(a, threads),
        Command::Aggregate(a) => commands::aggregate(a, threads),
        Command::RankWords(a) => commands::rank_words(a, threads),
        Command::Curve(a) => commands::curve(a, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
