//! Optimizer and epoch loop for one (train, validation) pair.
//!
//! Training is fully deterministic for a fixed seed: the example order,
//! dropout masks, and optimizer arithmetic all derive from
//! `TrainConfig::seed`. A non-finite value anywhere in a forward or
//! backward pass aborts the run with the epoch and batch in the error
//! rather than letting a diverged model poison downstream averages.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelIndex;
use crate::encoder::{ClassifierModel, ForwardMode};
use crate::metrics::{compute_metrics, ConfusionMatrix, MetricSet, MetricsError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::TensorError;
use crate::tokenizer::{encode, Vocab};
use crate::data::QARecord;

/// Dropout noise must not replay the shuffle stream, so its generator is
/// seeded with a fixed offset from the run seed.
const DROPOUT_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {details}")]
    BadConfig { details: String },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation set is empty")]
    EmptyValSet,
    #[error("label {label:?} is not in the label index")]
    UnknownLabel { label: String },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Numeric {
        epoch: usize,
        batch: usize,
        #[source]
        source: TensorError,
    },
    #[error("optimizer state does not match parameter {name:?}: {details}")]
    StateMismatch { name: String, details: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |details: String| Err(TrainError::BadConfig { details });
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// A tokenized training or validation example.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub encoding: crate::tokenizer::Encoding,
    pub label: usize,
}

/// Tokenizes records against a vocabulary and resolves gold labels to
/// ids.
pub fn encode_records(
    records: &[QARecord],
    vocab: &Vocab,
    labels: &LabelIndex,
    max_len: usize,
) -> Result<Vec<LabeledExample>, TrainError> {
    records
        .iter()
        .map(|r| {
            let label = labels
                .id(&r.label)
                .ok_or_else(|| TrainError::UnknownLabel { label: r.label.clone() })?;
            Ok(LabeledExample { encoding: encode(&r.question, vocab, max_len), label })
        })
        .collect()
}

/// One epoch's record: training loss plus validation metrics, with the
/// cumulative wall time since `fit` started.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub fold: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricSet,
    pub wall_time_s: f64,
}

/// Adam with decoupled weight decay:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
///
/// Moment buffers are keyed by position in the model's trainable list
/// and validated by name on every step, so a model whose trainable set
/// changed mid-run is rejected instead of silently mis-updating.
pub struct AdamW<T> {
    lr: T,
    wd: T,
    beta1: T,
    beta2: T,
    eps: T,
    beta1_f64: f64,
    beta2_f64: f64,
    step: u64,
    moments: Option<Vec<(String, Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: T::from_f64(cfg.learning_rate),
            wd: T::from_f64(cfg.weight_decay),
            beta1: T::from_f64(cfg.beta1),
            beta2: T::from_f64(cfg.beta2),
            eps: T::from_f64(cfg.eps),
            beta1_f64: cfg.beta1,
            beta2_f64: cfg.beta2,
            step: 0,
            moments: None,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must line up one-to-one, in order,
    /// with the model's current trainable parameters.
    pub fn step<M: ClassifierModel<T>>(
        &mut self,
        model: &mut M,
        grads: &[(String, Vec<T>)],
    ) -> Result<(), TrainError> {
        let mut params = model.trainable_params_mut();
        if params.len() != grads.len() {
            return Err(TrainError::StateMismatch {
                name: String::new(),
                details: format!("{} gradients for {} trainable tensors", grads.len(), params.len()),
            });
        }
        let moments = self.moments.get_or_insert_with(|| {
            params
                .iter()
                .map(|(name, t)| (name.clone(), vec![T::zero(); t.numel()], vec![T::zero(); t.numel()]))
                .collect()
        });
        self.step += 1;
        let bc1 = T::from_f64(1.0 - self.beta1_f64.powf(self.step as f64));
        let bc2 = T::from_f64(1.0 - self.beta2_f64.powf(self.step as f64));
        let one = T::one();
        for (((pname, tensor), (gname, grad)), (sname, m, v)) in
            params.iter_mut().zip(grads).zip(moments.iter_mut())
        {
            if pname != gname || pname != sname {
                return Err(TrainError::StateMismatch {
                    name: pname.clone(),
                    details: format!("gradient is for {gname:?}, optimizer state for {sname:?}"),
                });
            }
            if grad.len() != tensor.numel() {
                return Err(TrainError::StateMismatch {
                    name: pname.clone(),
                    details: format!("gradient has {} values, tensor has {}", grad.len(), tensor.numel()),
                });
            }
            let data = tensor.data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.wd * data[j]);
            }
        }
        Ok(())
    }
}

/// Index of the row maximum; ties go to the lower index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One pass over the training set: seeded shuffle, one optimizer step
/// per batch (the last batch may be smaller), dropout active. Returns
/// the mean per-batch loss.
pub fn train_epoch<T: Scalar, M: ClassifierModel<T>>(
    model: &mut M,
    data: &[LabeledExample],
    cfg: &TrainConfig,
    opt: &mut AdamW<T>,
    shuffle_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if cfg.shuffle {
        order.shuffle(shuffle_rng);
    }
    let mut total = 0.0;
    let mut batches = 0usize;
    for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<_> = chunk.iter().map(|&i| data[i].encoding.clone()).collect();
        let targets: Vec<usize> = chunk.iter().map(|&i| data[i].label).collect();
        let numeric = |source| TrainError::Numeric { epoch, batch: batch_idx, source };
        let mut tape = Tape::new();
        let bound = model
            .bind_forward(&mut tape, &batch, ForwardMode::Train { dropout_rng })
            .map_err(numeric)?;
        let loss = tape.cross_entropy(bound.logits, &targets).map_err(numeric)?;
        tape.backward(loss).map_err(numeric)?;
        total += tape.scalar_value(loss).map_err(numeric)?.to_f64();
        let grads: Vec<(String, Vec<T>)> = bound
            .trainable
            .iter()
            .map(|(name, r)| (name.clone(), tape.grad(*r).unwrap_or_default().to_vec()))
            .collect();
        opt.step(model, &grads)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Dropout-free evaluation: argmax predictions against gold labels,
/// reduced through the confusion matrix. Never mutates the model.
pub fn evaluate_epoch<T: Scalar, M: ClassifierModel<T>>(
    model: &M,
    data: &[LabeledExample],
    batch_size: usize,
) -> Result<MetricSet, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyValSet);
    }
    let num_labels = model.config().num_labels;
    let mut cm = ConfusionMatrix::new(num_labels);
    for chunk in data.chunks(batch_size.max(1)) {
        let batch: Vec<_> = chunk.iter().map(|ex| ex.encoding.clone()).collect();
        let logits = model
            .forward_logits(&batch)
            .map_err(|source| TrainError::Numeric { epoch: 0, batch: 0, source })?;
        for (row, ex) in chunk.iter().enumerate() {
            let scores = &logits.data()[row * num_labels..(row + 1) * num_labels];
            cm.add(ex.label, argmax(scores))?;
        }
    }
    Ok(compute_metrics(&cm)?)
}

/// Runs `cfg.epochs` training epochs with per-epoch validation, timing
/// each epoch cumulatively on a monotonic clock. The model is left in
/// its final-epoch state.
pub fn fit<T: Scalar, M: ClassifierModel<T>>(
    model: &mut M,
    train: &[LabeledExample],
    val: &[LabeledExample],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<Vec<EpochMetrics>, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if val.is_empty() {
        return Err(TrainError::EmptyValSet);
    }
    let mut opt = AdamW::new(cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SEED_SALT);
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let train_loss =
            train_epoch(model, train, cfg, &mut opt, &mut shuffle_rng, &mut dropout_rng, epoch)?;
        let val_metrics = evaluate_epoch(model, val, cfg.batch_size)?;
        history.push(EpochMetrics {
            fold,
            epoch,
            train_loss,
            val: val_metrics,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}
