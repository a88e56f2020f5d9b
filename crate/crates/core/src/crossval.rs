//! k-fold cross-validation orchestration and result aggregation.
//!
//! [`run_cross_validation`] partitions a record set into `k` folds,
//! trains one fresh model per fold on the other `k − 1` folds, evaluates
//! it on the held-out fold after every epoch, and assembles a
//! [`CVSummary`] whose `mean` is the arithmetic mean of the per-fold
//! summary metrics. [`aggregate_summary`] renders one comparison-table
//! row per summary with two-decimal, half-up-rounded percentages.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::data::{kfold_split, DataError, LabelIndex, QARecord};
use crate::encoder::ClassifierModel;
use crate::metrics::MetricSet;
use crate::scalar::Scalar;
use crate::tokenizer::Vocab;
use crate::train::{encode_records, fit, EpochMetrics, TrainConfig, TrainError};

/// Which epoch of each fold's history feeds the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SummaryMode {
    /// The last epoch's validation metrics (the default reading of
    /// "final assessment").
    #[default]
    FinalEpoch,
    /// The epoch with the highest validation F1; ties break toward the
    /// earlier epoch.
    BestEpoch,
}

/// Options for one cross-validation run.
#[derive(Debug, Clone)]
pub struct CvOptions {
    /// Number of folds.
    pub k: usize,
    /// Preserve per-label proportions across folds.
    pub stratified: bool,
    /// Maximum folds trained concurrently; 1 means serial.
    pub jobs: usize,
    pub mode: SummaryMode,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self { k: 5, stratified: true, jobs: 1, mode: SummaryMode::FinalEpoch }
    }
}

/// The outcome of one cross-validation run: per-fold summary metrics,
/// their arithmetic mean, the full per-epoch histories, and wall time.
#[derive(Debug, Clone, Serialize)]
pub struct CVSummary {
    pub variant_name: String,
    /// One summary [`MetricSet`] per fold, indexed by fold id.
    pub per_fold: Vec<MetricSet>,
    /// Arithmetic mean of `per_fold`.
    pub mean: MetricSet,
    /// Wall-clock duration of the whole run (all folds), in seconds.
    pub total_wall_time_s: f64,
    /// `k` histories of exactly `epochs` entries each.
    pub histories: Vec<Vec<EpochMetrics>>,
}

impl CVSummary {
    /// Recomputes the mean from the stored per-fold values; equals
    /// `self.mean` exactly because `mean` is derived from the same data.
    pub fn recompute_mean(&self) -> MetricSet {
        MetricSet::mean(&self.per_fold)
    }

    /// Per-fold training wall times: the last cumulative entry of each
    /// fold's history.
    pub fn fold_wall_times(&self) -> Vec<f64> {
        self.histories.iter().map(|h| h.last().map_or(0.0, |e| e.wall_time_s)).collect()
    }
}

#[derive(Debug, Error)]
pub enum CvError {
    #[error("cross-validation needs at least k = {k} records, got {n}")]
    TooFewRecords { n: usize, k: usize },
    #[error("invalid cross-validation options: {details}")]
    BadOptions { details: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: TrainError,
    },
}

/// Trains and evaluates one fold; used by both the serial and the
/// parallel paths so they produce identical results.
fn run_fold<T: Scalar, M: ClassifierModel<T>>(
    fold: usize,
    records: &[QARecord],
    plan_train: &[usize],
    plan_val: &[usize],
    vocab: &Vocab,
    labels: &LabelIndex,
    factory: &(impl Fn(u64) -> M + Sync),
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>, CvError> {
    let wrap = |source| CvError::Fold { fold, source };
    let train_records: Vec<QARecord> = plan_train.iter().map(|&i| records[i].clone()).collect();
    let val_records: Vec<QARecord> = plan_val.iter().map(|&i| records[i].clone()).collect();

    // Fold seed: base seed + fold id, applied to both the model draw and
    // the shuffle/dropout streams, so folds are independent but the whole
    // run is reproducible from one seed.
    let fold_seed = cfg.seed.wrapping_add(fold as u64);
    let mut model = factory(fold_seed);
    let max_len = model.config().max_len;

    let train = encode_records(&train_records, vocab, labels, max_len).map_err(wrap)?;
    let val = encode_records(&val_records, vocab, labels, max_len).map_err(wrap)?;

    let mut fold_cfg = cfg.clone();
    fold_cfg.seed = fold_seed;
    fit(&mut model, &train, &val, &fold_cfg, fold).map_err(|source| CvError::Fold { fold, source })
}

/// Picks the summary metric set out of one fold's history.
fn summarize_fold(history: &[EpochMetrics], mode: SummaryMode) -> MetricSet {
    match mode {
        SummaryMode::FinalEpoch => history.last().expect("fit returns ≥ 1 epoch").val,
        SummaryMode::BestEpoch => {
            let mut best = &history[0];
            for e in &history[1..] {
                if e.val.f1 > best.val.f1 {
                    best = e;
                }
            }
            best.val
        }
    }
}

/// Runs `opts.k`-fold cross-validation over `records`.
///
/// For each fold `f`, a fresh model is drawn from `factory(cfg.seed + f)`
/// and trained with `cfg` (per-fold seed `cfg.seed + f`) on the other
/// folds, evaluating on fold `f` after every epoch. Folds may run
/// concurrently (`opts.jobs` > 1); results are merged by fold id, so the
/// summary is identical to a serial run. Any fold failure aborts the run
/// with the fold id in the diagnostic.
pub fn run_cross_validation<T, M, F>(
    variant_name: &str,
    records: &[QARecord],
    vocab: &Vocab,
    labels: &LabelIndex,
    factory: F,
    cfg: &TrainConfig,
    opts: &CvOptions,
) -> Result<CVSummary, CvError>
where
    T: Scalar,
    M: ClassifierModel<T>,
    F: Fn(u64) -> M + Sync,
{
    if opts.k < 2 {
        return Err(CvError::BadOptions { details: format!("k must be ≥ 2, got {}", opts.k) });
    }
    if opts.jobs == 0 {
        return Err(CvError::BadOptions { details: "jobs must be ≥ 1".into() });
    }
    if records.len() < opts.k {
        return Err(CvError::TooFewRecords { n: records.len(), k: opts.k });
    }

    let started = Instant::now();
    let plan = kfold_split(records, opts.k, cfg.seed, opts.stratified)?;
    let fold_indices: Vec<(Vec<usize>, Vec<usize>)> =
        (0..opts.k).map(|f| (plan.training_indices(f), plan.validation_indices(f))).collect();

    let mut histories: Vec<Vec<EpochMetrics>> = Vec::with_capacity(opts.k);
    if opts.jobs == 1 {
        for (f, (tr, va)) in fold_indices.iter().enumerate() {
            histories.push(run_fold(f, records, tr, va, vocab, labels, &factory, cfg)?);
        }
    } else {
        // Waves of at most `jobs` folds; joining in fold order keeps the
        // merge deterministic regardless of completion order.
        for (wave_idx, chunk) in fold_indices.chunks(opts.jobs).enumerate() {
            let base = wave_idx * opts.jobs;
            let wave: Vec<Result<Vec<EpochMetrics>, CvError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .enumerate()
                    .map(|(off, (tr, va))| {
                        let fold = base + off;
                        let factory = &factory;
                        scope.spawn(move || {
                            run_fold(fold, records, tr, va, vocab, labels, factory, cfg)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("fold thread panicked")).collect()
            });
            for r in wave {
                histories.push(r?);
            }
        }
    }

    let per_fold: Vec<MetricSet> = histories.iter().map(|h| summarize_fold(h, opts.mode)).collect();
    let mean = MetricSet::mean(&per_fold);
    Ok(CVSummary {
        variant_name: variant_name.to_string(),
        per_fold,
        mean,
        total_wall_time_s: started.elapsed().as_secs_f64(),
        histories,
    })
}

/// One rendered comparison-table row; all percentage fields carry two
/// decimals with half-up rounding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub variant: String,
    pub accuracy: String,
    pub precision: String,
    pub recall: String,
    pub f1: String,
    pub time_s: String,
}

/// Renders a fraction in `[0, 1]` as a percentage with exactly two
/// decimals, rounding halves up (0.78475 → "78.48", 0.005 → "0.50").
pub fn format_percent(frac: f64) -> String {
    let scaled = (frac * 10_000.0).round() / 100.0;
    format!("{scaled:.2}")
}

/// Builds comparison-table rows (variant, accuracy %, precision %,
/// recall %, F1 %, wall time) in the order given.
pub fn aggregate_summary(summaries: &[CVSummary]) -> Vec<SummaryRow> {
    summaries
        .iter()
        .map(|s| SummaryRow {
            variant: s.variant_name.clone(),
            accuracy: format_percent(s.mean.accuracy),
            precision: format_percent(s.mean.precision),
            recall: format_percent(s.mean.recall),
            f1: format_percent(s.mean.f1),
            time_s: format!("{:.2}", s.total_wall_time_s),
        })
        .collect()
}

/// Header of the per-run metrics CSV; one row per (fold, epoch).
pub const METRICS_CSV_HEADER: &str =
    "variant,fold,epoch,train_loss,accuracy,precision,recall,f1,wall_time_s";

/// Renders one history's rows for the metrics CSV. Floats use the
/// shortest exact representation so means recomputed from the file match
/// the stored summary bit-for-bit.
pub fn metrics_csv_rows(variant: &str, history: &[EpochMetrics]) -> Vec<String> {
    history
        .iter()
        .map(|e| {
            format!(
                "{variant},{},{},{},{},{},{},{},{}",
                e.fold,
                e.epoch,
                e.train_loss,
                e.val.accuracy,
                e.val.precision,
                e.val.recall,
                e.val.f1,
                e.wall_time_s
            )
        })
        .collect()
}
