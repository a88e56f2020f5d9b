//! Command-line surface: `medqa {train,crossval,ask,report}`.
//!
//! Numeric hyperparameters are optional at the flag level; the effective
//! value is resolved in `config` with precedence
//! built-in defaults < `MEDQA_SEED` (seed only) < `--config` file < flags.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "medqa",
    version,
    about = "Train, cross-validate, and query a two-stage medical question classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a 70/30 split and write a run directory with a checkpoint.
    Train(TrainArgs),
    /// Run stratified k-fold cross-validation and write per-epoch metrics.
    Crossval(CrossvalArgs),
    /// Load a checkpoint and answer questions read line-by-line from stdin.
    Ask(AskArgs),
    /// Render per-metric training curves and a summary table from a run.
    Report(ReportArgs),
}

/// Hyperparameter flags shared by `train` and `crossval`.
#[derive(Debug, Clone, clap::Args)]
pub struct HyperArgs {
    /// Model preset: mini-roberta-base, mini-roberta-large,
    /// mini-bert-uncased, or mini-bert-large-uncased.
    #[arg(long)]
    pub variant: Option<String>,

    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// RNG seed for splits, init, shuffling, and dropout.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// AdamW step size (constant; no schedule).
    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Decoupled weight decay coefficient.
    #[arg(long)]
    pub weight_decay: Option<f64>,

    /// Dropout probability applied during training.
    #[arg(long)]
    pub dropout: Option<f64>,

    /// Sequence length cap; derived from the data when omitted.
    #[arg(long)]
    pub max_len: Option<usize>,

    /// Train low-rank adapters (and the classifier head) instead of all
    /// weights.
    #[arg(long)]
    pub lora: bool,
}

#[derive(Debug, Parser)]
pub struct TrainArgs {
    /// Primary dataset CSV (Disease,Question,Label).
    #[arg(long)]
    pub data: PathBuf,

    /// Optional answer CSV (Disease,Label,Answer) checked for label
    /// coverage; unmatched labels produce a warning.
    #[arg(long)]
    pub answers: Option<PathBuf>,

    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Fraction of records used for training (rest validate).
    #[arg(long)]
    pub train_ratio: Option<f64>,

    /// Overwrite existing run artifacts.
    #[arg(long)]
    pub force: bool,

    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Parser)]
pub struct CrossvalArgs {
    /// Primary dataset CSV (Disease,Question,Label).
    #[arg(long)]
    pub data: PathBuf,

    /// Output run directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Number of folds.
    #[arg(long)]
    pub k: Option<usize>,

    /// Folds trained concurrently (merged deterministically by fold id).
    #[arg(long)]
    pub jobs: Option<usize>,

    /// Assign folds by shuffling records globally instead of per label.
    #[arg(long)]
    pub no_stratify: bool,

    /// Summarize each fold by its best-F1 epoch instead of the final epoch.
    #[arg(long)]
    pub best_epoch: bool,

    /// Overwrite existing run artifacts.
    #[arg(long)]
    pub force: bool,

    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Parser)]
pub struct AskArgs {
    /// Checkpoint file (.mqf) produced by `train`.
    #[arg(long)]
    pub model: PathBuf,

    /// Answer CSV (Disease,Label,Answer) supplying the label -> answer bank.
    #[arg(long)]
    pub answers: PathBuf,

    /// Minimum softmax confidence; below it the fallback answer is given.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Svg,
    Csv,
}

#[derive(Debug, Parser)]
pub struct ReportArgs {
    /// Run directory containing metrics.csv.
    #[arg(long)]
    pub run: PathBuf,

    /// Chart output format.
    #[arg(long, value_enum, default_value_t = ReportFormat::Svg)]
    pub format: ReportFormat,
}
