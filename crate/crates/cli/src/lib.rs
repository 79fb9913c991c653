//! Command-line driver: pre-training, transfer evaluation, class similarity
//! and reporting, all configured from one experiment file.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_finetune, cmd_lineval, cmd_make_synthetic, cmd_pretrain, cmd_report, cmd_similarity};
pub use config::ExperimentConfig;

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input paths; exit code 2.
    Usage(String),
    /// Anything that went wrong while running; exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<geossl_core::Error> for CliError {
    fn from(e: geossl_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "geossl", version, about = "SimSiam pre-training and transfer evaluation for aerial scene classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Self-supervised pre-training; writes checkpoints and a loss trace.
    Pretrain(PretrainArgs),
    /// Fine-tune a pre-trained backbone on a downstream dataset.
    Finetune(TransferArgs),
    /// Linear evaluation of a frozen backbone with few samples per class.
    Lineval(LinevalArgs),
    /// Percentage of downstream classes that also occur in a pre-training dataset.
    Similarity(SimilarityArgs),
    /// Render stored metrics as tables and an accuracy-versus-shots plot.
    Report(ReportArgs),
    /// Write a procedurally generated dataset with its manifest.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest, or `synthetic`; overrides the config.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Output root; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Validate and print the resolved config without running.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Pre-training checkpoint whose backbone is evaluated.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Worker threads for the seed loop.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct LinevalArgs {
    #[command(flatten)]
    pub transfer: TransferArgs,
    /// Samples per class; overrides `lineval.shots`. Repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub shots: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct SimilarityArgs {
    /// Manifest of the pre-training dataset.
    pub pretrain: PathBuf,
    /// Manifest of the downstream dataset.
    pub downstream: PathBuf,
    /// Alias file mapping alternative class names.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    /// Also write the result as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Metrics store (JSON lines).
    #[arg(long)]
    pub store: PathBuf,
    /// Table layout: tableII, tableV or tableVI.
    #[arg(long, default_value = "tableVI")]
    pub layout: String,
    /// Directory for the rendered files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Show the published reference values next to the measured ones.
    #[arg(long)]
    pub with_reference: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    /// Target directory; receives one folder per class and `manifest.toml`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 150)]
    pub per_class: usize,
    #[arg(long, default_value_t = 24)]
    pub image_size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(&a).map(|_| ()),
        Command::Finetune(a) => cmd_finetune(&a).map(|_| ()),
        Command::Lineval(a) => cmd_lineval(&a).map(|_| ()),
        Command::Similarity(a) => cmd_similarity(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
        Command::MakeSynthetic(a) => cmd_make_synthetic(&a).map(|_| ()),
    }
}
