//! `sslab`: corpus generation, pretraining, fine-tuning, analysis, scoring
//! and benchmarking from one binary.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sslab_core::Error;

/// Exit codes, one per error class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const ANCHOR: u8 = 4;
    pub const CONFIG: u8 = 5;
    pub const NUMERIC: u8 = 6;
    pub const PREDICTED_OOM: u8 = 7;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) => match e {
                Error::Io { .. } | Error::Missing(_) => exit::IO,
                Error::Anchor(_) => exit::ANCHOR,
                Error::Config(_) | Error::Format { .. } => exit::CONFIG,
                Error::NonFinite { .. } | Error::Divergence(_) | Error::Singular(_) | Error::InfiniteT => {
                    exit::NUMERIC
                }
                Error::PredictedOom { .. } => exit::PREDICTED_OOM,
                _ => exit::OTHER,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sslab", version, about = "Selective state-space speech encoders on a desk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a labelled corpus of phone-like segments.
    GenCorpus(GenCorpusArgs),
    /// Two-iteration masked-prediction pretraining.
    Pretrain(PretrainArgs),
    /// CTC fine-tuning of a pretrained encoder.
    Finetune(FinetuneArgs),
    /// Layer-wise phone purity and CCA report.
    Analyze(AnalyzeArgs),
    /// Anchor-normalized benchmark score.
    SuperbScore(SuperbArgs),
    /// Length sweep of MACs/sec, real-time factor and memory.
    Bench(BenchArgs),
    /// Paired t-test between two per-item score lists.
    Ttest(TtestArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 200)]
    pub n_utts: usize,
    #[arg(long, default_value_t = 20)]
    pub n_phones: usize,
    #[arg(long, default_value_t = 4)]
    pub n_speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub utts_per_doc: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Pretraining config (TOML); defaults to the desk configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Steps per iteration, e.g. `600,600`; one value runs one iteration.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of `<id>.wav` with `<id>.txt` transcripts.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out directory scored after training instead of the training data.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long, default_value = "utterance")]
    pub mode: String,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_seconds: Option<f64>,
    #[arg(long)]
    pub head_layers: Option<usize>,
    #[arg(long)]
    pub budget_bytes: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of `<id>.phn` alignments; defaults to the corpus directory.
    #[arg(long)]
    pub phones: Option<PathBuf>,
    /// Attribute embeddings as `name=path`; repeatable.
    #[arg(long)]
    pub embed: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 500, 1000])]
    pub k: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SuperbArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub anchors: PathBuf,
    /// Also write the score to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Encoder config files, or `preset:<kind>:<size>`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub configs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0])]
    pub lengths: Vec<f64>,
    #[arg(long)]
    pub budget_bytes: Option<u64>,
    /// Timed runs per row; 0 skips timing.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// `f64` (default) or `f32`.
    #[arg(long, default_value = "f64")]
    pub dtype: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    /// Per-item scores: one number per line, or a `wer.csv` from `finetune`.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::SuperbScore(a) => commands::superb(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Ttest(a) => commands::ttest(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
