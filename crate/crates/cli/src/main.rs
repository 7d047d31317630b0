//! Command-line front end: dataset generation, statistics, annotation
//! analysis, training, and ranking evaluation.
//!
//! Exit codes: 0 success, 2 usage errors (including missing input
//! files), 3 data validation or parse failures, 4 numeric failures
//! during training.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::str::FromStr;
use vis_causal::dataset::Split;
use vis_causal::model::Variant;

#[derive(Debug)]
pub struct AppError {
    pub code: i32,
    pub message: String,
}

impl AppError {
    pub fn new(code: i32, message: String) -> Self {
        Self { code, message }
    }
}

#[derive(Parser)]
#[command(
    name = "vis-causal",
    version,
    about = "Contextual-causality ranking toolkit: generate, inspect, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scorer variant and write the best checkpoint.
    Train(TrainArgs),
    /// Rank candidate effects and report Recall@K per category.
    Eval(EvalArgs),
    /// Vote analysis: plausibility histograms, IAA, positive counts.
    Analyze(AnalyzeArgs),
    /// Generate a planted-signal synthetic dataset.
    Synth(SynthArgs),
    /// Per-split dataset statistics.
    Stats(StatsArgs),
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Dataset file (v1 line format).
    #[arg(long)]
    data: PathBuf,
    /// Scorer architecture: vcc, no-context, no-attention, feature-context.
    #[arg(long, default_value = "vcc", value_parser = Variant::from_str)]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// SGD learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Epoch budget; the dev-best checkpoint within it is kept.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Embedding width d.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Hidden width h of the feed-forward blocks.
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    /// Keep the top-m detected objects per image pair.
    #[arg(long, default_value_t = 10)]
    objects: usize,
    /// Optional frozen embedding file (token + d numbers per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Dataset file (v1 line format).
    #[arg(long)]
    data: PathBuf,
    /// Split to evaluate: train, dev, or test.
    #[arg(long, default_value = "test", value_parser = Split::from_str)]
    split: Split,
    /// Score with a trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score with the random lower-bound baseline.
    #[arg(long)]
    random: bool,
    /// Rank from an external score file (query <TAB> candidate <TAB> score).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Random-baseline trials.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Seed for the random baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the top-m detected objects per image pair.
    #[arg(long, default_value_t = 10)]
    objects: usize,
    /// Worker threads for query scoring.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write the scores used for ranking as a score file.
    #[arg(long)]
    export_scores: Option<PathBuf>,
    /// Write every (query, candidate) pair as a natural sentence, for
    /// scoring by an external language model.
    #[arg(long)]
    export_sentences: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    /// Dataset file (v1 line format).
    #[arg(long)]
    data: PathBuf,
    /// Split to analyze (train, dev, test, or all).
    #[arg(long)]
    split: Option<String>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Generator configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the contextual-rule fraction.
    #[arg(long)]
    rho: Option<f64>,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the detection noise rate.
    #[arg(long)]
    noise: Option<f64>,
    /// Output dataset file.
    #[arg(long, default_value = "synthetic.jsonl")]
    out: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
pub struct StatsArgs {
    /// Dataset file (v1 line format).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn run(cli: Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Analyze(args) => commands::cmd_analyze(args),
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Stats(args) => commands::cmd_stats(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {}", err.message);
        std::process::exit(err.code);
    }
}
