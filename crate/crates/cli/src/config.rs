//! Run configuration: file schema, flag merging, and the resolved snapshot.
//!
//! A run directory's `config.json` is the fully resolved configuration.
//! Because `ResolvedConfig` serializes to the same field names `FileConfig`
//! reads, passing a snapshot back via `--config` (with the same data and no
//! extra flags) reproduces the run.

use std::path::Path;

use medqa_core::crossval::{CvOptions, SummaryMode};
use medqa_core::encoder::Variant;
use medqa_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::HyperArgs;
use crate::error::{usage, CliError};

/// Environment variable overriding the built-in default seed (42).
pub const SEED_ENV: &str = "MEDQA_SEED";

/// Optional JSON config file; every field may be omitted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub variant: Option<String>,
    pub lora: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub shuffle: Option<bool>,
    pub dropout: Option<f64>,
    pub max_len: Option<usize>,
    pub train_ratio: Option<f64>,
    pub k: Option<usize>,
    pub stratified: Option<bool>,
    pub jobs: Option<usize>,
    pub best_epoch: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            usage(format!("malformed config file {}: {e}", path.display()))
        })
    }
}

/// Every knob a run uses, with concrete values. Serialized verbatim into
/// the run directory as `config.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub variant: String,
    pub lora: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub dropout: f64,
    /// `None` until derived from the data; the snapshot always records the
    /// concrete value that was used.
    pub max_len: Option<usize>,
    pub train_ratio: f64,
    pub k: usize,
    pub stratified: bool,
    pub jobs: usize,
    pub best_epoch: bool,
}

impl ResolvedConfig {
    /// Merges defaults, the `MEDQA_SEED` environment variable, an optional
    /// config file, and flags — later sources win.
    pub fn resolve(
        hyper: &HyperArgs,
        train_ratio: Option<f64>,
        k: Option<usize>,
        jobs: Option<usize>,
        no_stratify: bool,
        best_epoch: bool,
    ) -> Result<Self, CliError> {
        let file = match &hyper.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let defaults = TrainConfig::default();
        let default_seed = match env_seed()? {
            Some(seed) => seed,
            None => defaults.seed,
        };

        let variant_name = hyper
            .variant
            .clone()
            .or(file.variant)
            .ok_or_else(|| usage("no --variant given and the config file names none"))?;
        // Reject unknown names here so every command fails fast with exit
        // code 2 instead of partway into a run.
        Variant::parse(&variant_name)?;

        Ok(Self {
            variant: variant_name,
            lora: hyper.lora || file.lora.unwrap_or(false),
            epochs: hyper.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            batch_size: hyper.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
            learning_rate: hyper
                .learning_rate
                .or(file.learning_rate)
                .unwrap_or(defaults.learning_rate),
            weight_decay: hyper
                .weight_decay
                .or(file.weight_decay)
                .unwrap_or(defaults.weight_decay),
            beta1: file.beta1.unwrap_or(defaults.beta1),
            beta2: file.beta2.unwrap_or(defaults.beta2),
            eps: file.eps.unwrap_or(defaults.eps),
            seed: hyper.seed.or(file.seed).unwrap_or(default_seed),
            shuffle: file.shuffle.unwrap_or(defaults.shuffle),
            dropout: hyper.dropout.or(file.dropout).unwrap_or(0.1),
            max_len: hyper.max_len.or(file.max_len),
            train_ratio: train_ratio.or(file.train_ratio).unwrap_or(0.7),
            k: k.or(file.k).unwrap_or(5),
            stratified: if no_stratify { false } else { file.stratified.unwrap_or(true) },
            jobs: jobs.or(file.jobs).unwrap_or(1),
            best_epoch: best_epoch || file.best_epoch.unwrap_or(false),
        })
    }

    pub fn variant(&self) -> Variant {
        // Checked during resolution.
        Variant::parse(&self.variant).expect("variant validated at resolve time")
    }

    /// Display name for metric rows: the preset name, with a `-lora`
    /// suffix when adapters are trained instead of the full model.
    pub fn variant_label(&self) -> String {
        if self.lora {
            format!("{}-lora", self.variant)
        } else {
            self.variant.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            k: self.k,
            stratified: self.stratified,
            jobs: self.jobs,
            mode: if self.best_epoch { SummaryMode::BestEpoch } else { SummaryMode::FinalEpoch },
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// Reads `MEDQA_SEED`; unset is fine, malformed is a usage error.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {raw:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(usage(format!("{SEED_ENV} is not valid unicode")))
        }
    }
}
