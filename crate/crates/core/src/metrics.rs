//! Confusion-matrix evaluation: accuracy, precision, recall, F1.
//!
//! Precision, recall, and F1 are unweighted macro means over all classes.
//! The averaging mode matters under class imbalance, so weighted
//! averaging is available behind [`Averaging::Weighted`] for comparison;
//! macro is the default and the documented interpretation. Per-class
//! values with a zero denominator count as 0 and stay in the mean, which
//! penalizes classes the model never predicts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("golds ({golds}) and preds ({preds}) differ in length")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("label id {id} out of range for {num_labels} labels")]
    LabelOutOfRange { id: usize, num_labels: usize },
    #[error("metrics need at least one evaluated example")]
    EmptyMatrix,
}

/// C x C counts; entry `[gold][pred]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_labels: usize,
}

impl ConfusionMatrix {
    pub fn new(num_labels: usize) -> Self {
        Self { counts: vec![0; num_labels * num_labels], num_labels }
    }

    pub fn from_pairs(golds: &[usize], preds: &[usize], num_labels: usize) -> Result<Self, MetricsError> {
        if golds.len() != preds.len() {
            return Err(MetricsError::LengthMismatch { golds: golds.len(), preds: preds.len() });
        }
        let mut cm = Self::new(num_labels);
        for (&g, &p) in golds.iter().zip(preds) {
            cm.add(g, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, gold: usize, pred: usize) -> Result<(), MetricsError> {
        let c = self.num_labels;
        for id in [gold, pred] {
            if id >= c {
                return Err(MetricsError::LabelOutOfRange { id, num_labels: c });
            }
        }
        self.counts[gold * c + pred] += 1;
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.num_labels + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, gold: usize) -> u64 {
        let c = self.num_labels;
        self.counts[gold * c..(gold + 1) * c].iter().sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        (0..self.num_labels).map(|g| self.count(g, pred)).sum()
    }
}

/// The four reported evaluation figures, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricSet {
    /// Arithmetic mean across several metric sets, e.g. over folds.
    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        MetricSet {
            accuracy: sets.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: sets.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: sets.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: sets.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Macro,
    /// Per-class values weighted by gold support.
    Weighted,
}

/// Macro-averaged metrics; see [`compute_metrics_with`] for the weighted
/// variant.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricSet, MetricsError> {
    compute_metrics_with(cm, Averaging::Macro)
}

pub fn compute_metrics_with(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricSet, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let c = cm.num_labels();
    let trace: u64 = (0..c).map(|i| cm.count(i, i)).sum();
    let accuracy = trace as f64 / total as f64;

    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for i in 0..c {
        let tp = cm.count(i, i) as f64;
        let col = cm.col_sum(i) as f64;
        let row = cm.row_sum(i) as f64;
        let p = if col > 0.0 { tp / col } else { 0.0 };
        let r = if row > 0.0 { tp / row } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let weight = match averaging {
            Averaging::Macro => 1.0 / c as f64,
            Averaging::Weighted => row / total as f64,
        };
        precision += weight * p;
        recall += weight * r;
        f1 += weight * f;
    }
    Ok(MetricSet { accuracy, precision, recall, f1 })
}
