//! Low-rank adaptation of the encoder's dense projections.
//!
//! Wrapping freezes every base tensor and adds a trainable pair
//! `(A: [r x d_in], B: [d_out x r])` per targeted matrix, so the adapted
//! projection computes `y = x W + (alpha/r) (x A^T) B^T` (rows are
//! examples; `W` is stored `[d_in x d_out]`). `B` starts at zero, which
//! makes the wrapped model exactly equal to the base model at
//! initialization, and `A`/`B` can later be folded back into `W` without
//! changing the function the model computes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    bind_plain, run_encoder, BoundForward, ClassifierModel, ConfigError, EncoderModel, ForwardMode,
    ModelConfig,
};
use crate::scalar::Scalar;
use crate::tape::{Tape, TensorRef};
use crate::tensor::{Tensor, TensorError};
use crate::tokenizer::Encoding;

/// Which dense matrix an adapter attaches to. All but `Classifier` exist
/// once per encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMatrix {
    Query,
    Key,
    Value,
    Output,
    FfnUp,
    FfnDown,
    Classifier,
}

impl TargetMatrix {
    /// Canonical site order; adapters are created and serialized in this
    /// order regardless of how the config lists targets.
    pub const ALL: [TargetMatrix; 7] = [
        TargetMatrix::Query,
        TargetMatrix::Key,
        TargetMatrix::Value,
        TargetMatrix::Output,
        TargetMatrix::FfnUp,
        TargetMatrix::FfnDown,
        TargetMatrix::Classifier,
    ];

    fn field_name(self) -> &'static str {
        match self {
            TargetMatrix::Query => "attn_q",
            TargetMatrix::Key => "attn_k",
            TargetMatrix::Value => "attn_v",
            TargetMatrix::Output => "attn_o",
            TargetMatrix::FfnUp => "ffn_up",
            TargetMatrix::FfnDown => "ffn_down",
            TargetMatrix::Classifier => "classifier",
        }
    }

    /// (d_in, d_out) of the targeted matrix under `config`.
    fn dims(self, config: &ModelConfig) -> (usize, usize) {
        let d = config.d_model;
        match self {
            TargetMatrix::Query | TargetMatrix::Key | TargetMatrix::Value | TargetMatrix::Output => (d, d),
            TargetMatrix::FfnUp => (d, config.d_ff),
            TargetMatrix::FfnDown => (config.d_ff, d),
            TargetMatrix::Classifier => (d, config.num_labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<TargetMatrix>,
    pub train_classifier_head: bool,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 8.0,
            targets: vec![TargetMatrix::Query, TargetMatrix::Value],
            train_classifier_head: true,
        }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Checks rank and alpha against the model the adapters will attach
    /// to. The rank must fit the smallest dimension of every target.
    pub fn validate(&self, model: &ModelConfig) -> Result<(), ConfigError> {
        if self.rank == 0 {
            return Err(ConfigError::ZeroDim { field: "lora rank" });
        }
        if !(self.alpha > 0.0) {
            return Err(ConfigError::BadAlpha { alpha: self.alpha });
        }
        for &target in &self.targets {
            let (d_in, d_out) = target.dims(model);
            let cap = d_in.min(d_out);
            if self.rank > cap {
                return Err(ConfigError::RankTooLarge { rank: self.rank, target: target.field_name(), cap });
            }
        }
        Ok(())
    }

    /// Targets in canonical order with duplicates removed.
    fn canonical_targets(&self) -> Vec<TargetMatrix> {
        TargetMatrix::ALL.into_iter().filter(|t| self.targets.contains(t)).collect()
    }
}

/// One adapter pair. `layer` is `None` for the classifier site.
#[derive(Debug, Clone)]
pub struct LoraAdapter<T> {
    pub layer: Option<usize>,
    pub target: TargetMatrix,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> LoraAdapter<T> {
    /// Stable name prefix used for trainable-parameter listings and the
    /// checkpoint manifest ("lora.layers.0.attn_q", "lora.classifier").
    pub fn name(&self) -> String {
        match self.layer {
            Some(i) => format!("lora.layers.{}.{}", i, self.target.field_name()),
            None => format!("lora.{}", self.target.field_name()),
        }
    }
}

/// A frozen encoder plus trainable low-rank deltas.
#[derive(Debug, Clone)]
pub struct LoraModel<T: Scalar> {
    pub base: EncoderModel<T>,
    pub adapters: Vec<LoraAdapter<T>>,
    pub lora_config: LoraConfig,
}

/// Every adapter site implied by the config, in canonical order:
/// layer-major over per-layer targets, classifier last.
fn sites(model: &ModelConfig, config: &LoraConfig) -> Vec<(Option<usize>, TargetMatrix)> {
    let targets = config.canonical_targets();
    let mut out = Vec::new();
    for layer in 0..model.num_layers {
        for &t in &targets {
            if t != TargetMatrix::Classifier {
                out.push((Some(layer), t));
            }
        }
    }
    if targets.contains(&TargetMatrix::Classifier) {
        out.push((None, TargetMatrix::Classifier));
    }
    out
}

/// Freezes `model` and attaches freshly initialized adapters:
/// `A ~ Normal(0, 0.02)` and `B = 0`, drawn deterministically from
/// `seed`. The classifier head stays trainable when the config says so.
pub fn wrap_with_lora<T: Scalar>(
    mut model: EncoderModel<T>,
    config: LoraConfig,
    seed: u64,
) -> Result<LoraModel<T>, ConfigError> {
    config.validate(&model.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adapters = sites(&model.config, &config)
        .into_iter()
        .map(|(layer, target)| {
            let (d_in, d_out) = target.dims(&model.config);
            LoraAdapter {
                layer,
                target,
                a: Tensor::randn(vec![config.rank, d_in], 0.02, &mut rng).with_requires_grad(),
                b: Tensor::zeros(vec![d_out, config.rank]).with_requires_grad(),
            }
        })
        .collect();
    for (_, t) in model.params_mut() {
        t.set_requires_grad(false);
    }
    if config.train_classifier_head {
        model.classifier.weight.set_requires_grad(true);
        model.classifier.bias.set_requires_grad(true);
    }
    Ok(LoraModel { base: model, adapters, lora_config: config })
}

/// `y = x W + (alpha/r) (x A^T) B^T` on the tape, with `x: [m x d_in]`,
/// `w: [d_in x d_out]`, `a: [r x d_in]`, `b: [d_out x r]`. Gradients
/// reach `a` and `b` (and `x`); whether `w` accumulates any is decided
/// by the `requires_grad` flag of the leaf behind it.
pub fn lora_linear_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    w: TensorRef,
    a: TensorRef,
    b: TensorRef,
    alpha: f64,
    rank: usize,
) -> Result<TensorRef, TensorError> {
    let base = tape.matmul(x, w)?;
    let xa = tape.matmul_nt(x, a)?;
    let delta = tape.matmul_nt(xa, b)?;
    let scaled = tape.scale(delta, T::from_f64(alpha / rank as f64))?;
    tape.add(base, scaled)
}

/// Folds every adapter into its base matrix
/// (`W <- W + (alpha/r) A^T B^T`) and returns the plain encoder with all
/// parameters trainable again.
pub fn merge_lora<T: Scalar>(model: LoraModel<T>) -> EncoderModel<T> {
    let LoraModel { mut base, adapters, lora_config } = model;
    let scale = T::from_f64(lora_config.scaling());
    for adapter in &adapters {
        let (d_in, d_out) = adapter.target.dims(&base.config);
        let rank = lora_config.rank;
        let weight = site_weight_mut(&mut base, adapter.layer, adapter.target);
        let a = adapter.a.data();
        let b = adapter.b.data();
        let w = weight.data_mut();
        for i in 0..d_in {
            for o in 0..d_out {
                let mut dot = T::zero();
                for t in 0..rank {
                    dot += a[t * d_in + i] * b[o * rank + t];
                }
                w[i * d_out + o] += scale * dot;
            }
        }
    }
    for (_, t) in base.params_mut() {
        t.set_requires_grad(true);
    }
    base
}

fn site_weight_mut<T: Scalar>(
    base: &mut EncoderModel<T>,
    layer: Option<usize>,
    target: TargetMatrix,
) -> &mut Tensor<T> {
    match (layer, target) {
        (Some(i), TargetMatrix::Query) => &mut base.layers[i].attn_q.weight,
        (Some(i), TargetMatrix::Key) => &mut base.layers[i].attn_k.weight,
        (Some(i), TargetMatrix::Value) => &mut base.layers[i].attn_v.weight,
        (Some(i), TargetMatrix::Output) => &mut base.layers[i].attn_o.weight,
        (Some(i), TargetMatrix::FfnUp) => &mut base.layers[i].ffn_up.weight,
        (Some(i), TargetMatrix::FfnDown) => &mut base.layers[i].ffn_down.weight,
        (None, TargetMatrix::Classifier) => &mut base.classifier.weight,
        (layer, target) => unreachable!("adapter site ({layer:?}, {target:?}) cannot exist"),
    }
}

/// Closed-form trainable size: `sum over sites of r (d_in + d_out)`,
/// plus the classifier head when it is left trainable.
pub fn lora_trainable_count<T: Scalar>(model: &LoraModel<T>) -> usize {
    let cfg = &model.base.config;
    let adapters: usize = sites(cfg, &model.lora_config)
        .into_iter()
        .map(|(_, t)| {
            let (d_in, d_out) = t.dims(cfg);
            model.lora_config.rank * (d_in + d_out)
        })
        .sum();
    let head = if model.lora_config.train_classifier_head {
        cfg.d_model * cfg.num_labels + cfg.num_labels
    } else {
        0
    };
    adapters + head
}

impl<T: Scalar> ClassifierModel<T> for LoraModel<T> {
    fn config(&self) -> &ModelConfig {
        &self.base.config
    }

    fn bind_forward(
        &self,
        tape: &mut Tape<T>,
        batch: &[Encoding],
        mode: ForwardMode<'_>,
    ) -> Result<BoundForward, TensorError> {
        let (mut bound, mut trainable) = bind_plain(tape, &self.base);
        let scale = self.lora_config.scaling();
        for adapter in &self.adapters {
            let ra = tape.leaf(&adapter.a);
            let rb = tape.leaf(&adapter.b);
            trainable.push((format!("{}.a", adapter.name()), ra));
            trainable.push((format!("{}.b", adapter.name()), rb));
            let slot = match (adapter.layer, adapter.target) {
                (Some(i), TargetMatrix::Query) => &mut bound.layers[i].attn_q,
                (Some(i), TargetMatrix::Key) => &mut bound.layers[i].attn_k,
                (Some(i), TargetMatrix::Value) => &mut bound.layers[i].attn_v,
                (Some(i), TargetMatrix::Output) => &mut bound.layers[i].attn_o,
                (Some(i), TargetMatrix::FfnUp) => &mut bound.layers[i].ffn_up,
                (Some(i), TargetMatrix::FfnDown) => &mut bound.layers[i].ffn_down,
                (None, TargetMatrix::Classifier) => &mut bound.classifier,
                (layer, target) => unreachable!("adapter site ({layer:?}, {target:?}) cannot exist"),
            };
            slot.adapter = Some((ra, rb, scale));
        }
        let logits = run_encoder(tape, &bound, &self.base.config, batch, mode)?;
        Ok(BoundForward { logits, trainable })
    }

    fn trainable_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.base.trainable_params();
        for adapter in &self.adapters {
            out.push((format!("{}.a", adapter.name()), &adapter.a));
            out.push((format!("{}.b", adapter.name()), &adapter.b));
        }
        out
    }

    fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.base.trainable_params_mut();
        for adapter in &mut self.adapters {
            let name = adapter.name();
            out.push((format!("{name}.a"), &mut adapter.a));
            out.push((format!("{name}.b"), &mut adapter.b));
        }
        out
    }

    fn count_parameters(&self, trainable_only: bool) -> usize {
        let adapters: usize = self.adapters.iter().map(|ad| ad.a.numel() + ad.b.numel()).sum();
        self.base.count_parameters(trainable_only) + adapters
    }
}
