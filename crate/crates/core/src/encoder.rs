//! Mini transformer encoder classifier.
//!
//! Four size presets stand in for the evaluated model lineup; "large"
//! presets have strictly more parameters than "base" ones. Architecture
//! choices the surrounding text leaves open are fixed here and
//! documented: post-norm residual sublayers (original BERT ordering),
//! learned absolute position embeddings, an embedding layer norm, GELU
//! (tanh approximation) in the feed-forward block, and [CLS] pooling
//! with no extra pooler layer. Attention is
//! `softmax(Q K^T / sqrt(d_head) + mask_bias) V` with a -1e9 bias on
//! padded key positions, so padding cannot influence real tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tape::{Tape, TensorRef};
use crate::tensor::{Tensor, TensorError};
use crate::tokenizer::Encoding;

pub const INIT_STD: f64 = 0.02;
const MASK_BIAS: f64 = -1e9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("d_model {d_model} is not divisible by num_heads {num_heads}")]
    HeadsDontDivide { d_model: usize, num_heads: usize },
    #[error("num_labels must be at least 2, got {num_labels}")]
    TooFewLabels { num_labels: usize },
    #[error("dropout must lie in [0, 1), got {dropout}")]
    BadDropout { dropout: f64 },
    #[error("vocab_size {vocab_size} cannot cover the 4 reserved tokens")]
    VocabTooSmall { vocab_size: usize },
    #[error("max_len must be at least 3, got {max_len}")]
    MaxLenTooSmall { max_len: usize },
    #[error("{field} must be nonzero")]
    ZeroDim { field: &'static str },
    #[error("unknown variant {name:?}; expected one of {expected:?}")]
    UnknownVariant { name: String, expected: [&'static str; 4] },
    #[error("lora alpha must be positive, got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("lora rank {rank} exceeds the smallest dimension ({cap}) of target {target}")]
    RankTooLarge { rank: usize, target: &'static str, cap: usize },
}

/// The four size presets named after the models they stand in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    MiniRobertaBase,
    MiniRobertaLarge,
    MiniBertUncased,
    MiniBertLargeUncased,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::MiniRobertaBase,
        Variant::MiniRobertaLarge,
        Variant::MiniBertUncased,
        Variant::MiniBertLargeUncased,
    ];

    pub const NAMES: [&'static str; 4] =
        ["mini-roberta-base", "mini-roberta-large", "mini-bert-uncased", "mini-bert-large-uncased"];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MiniRobertaBase => "mini-roberta-base",
            Variant::MiniRobertaLarge => "mini-roberta-large",
            Variant::MiniBertUncased => "mini-bert-uncased",
            Variant::MiniBertLargeUncased => "mini-bert-large-uncased",
        }
    }

    pub fn parse(name: &str) -> Result<Variant, ConfigError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| ConfigError::UnknownVariant { name: name.to_string(), expected: Variant::NAMES })
    }

    /// (num_layers, num_heads, d_model, d_ff).
    fn dims(self) -> (usize, usize, usize, usize) {
        match self {
            Variant::MiniRobertaBase | Variant::MiniBertUncased => (2, 4, 64, 128),
            Variant::MiniRobertaLarge | Variant::MiniBertLargeUncased => (4, 8, 128, 256),
        }
    }
}

/// Hyperparameters of one encoder instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_labels: usize,
    pub dropout: f64,
    pub variant_name: String,
}

impl ModelConfig {
    /// Preset dimensions for a named variant; data-dependent sizes are
    /// passed in.
    pub fn for_variant(variant: Variant, vocab_size: usize, max_len: usize, num_labels: usize) -> Self {
        let (num_layers, num_heads, d_model, d_ff) = variant.dims();
        Self {
            num_layers,
            num_heads,
            d_model,
            d_ff,
            vocab_size,
            max_len,
            num_labels,
            dropout: 0.1,
            variant_name: variant.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_heads == 0 {
            return Err(ConfigError::ZeroDim { field: "num_heads" });
        }
        if self.d_model == 0 {
            return Err(ConfigError::ZeroDim { field: "d_model" });
        }
        if self.d_ff == 0 {
            return Err(ConfigError::ZeroDim { field: "d_ff" });
        }
        if self.d_model % self.num_heads != 0 {
            return Err(ConfigError::HeadsDontDivide { d_model: self.d_model, num_heads: self.num_heads });
        }
        if self.num_labels < 2 {
            return Err(ConfigError::TooFewLabels { num_labels: self.num_labels });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::BadDropout { dropout: self.dropout });
        }
        if self.vocab_size < 4 {
            return Err(ConfigError::VocabTooSmall { vocab_size: self.vocab_size });
        }
        if self.max_len < 3 {
            return Err(ConfigError::MaxLenTooSmall { max_len: self.max_len });
        }
        Ok(())
    }
}

/// A dense projection stored as `weight: [d_in x d_out]` plus bias.
#[derive(Debug, Clone)]
pub struct LinearParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Learned per-feature scale and shift of a layer norm.
#[derive(Debug, Clone)]
pub struct NormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderLayer<T> {
    pub attn_q: LinearParams<T>,
    pub attn_k: LinearParams<T>,
    pub attn_v: LinearParams<T>,
    pub attn_o: LinearParams<T>,
    pub attn_norm: NormParams<T>,
    pub ffn_up: LinearParams<T>,
    pub ffn_down: LinearParams<T>,
    pub ffn_norm: NormParams<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderModel<T: Scalar> {
    pub config: ModelConfig,
    pub tok_embed: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub embed_norm: NormParams<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub classifier: LinearParams<T>,
}

impl<T: Scalar> EncoderModel<T> {
    /// Builds the parameter structure, drawing every weight matrix from
    /// `weight` and fixing biases at 0, gamma at 1, beta at 0. Everything
    /// starts trainable.
    fn scaffold(config: ModelConfig, weight: &mut dyn FnMut(Vec<usize>) -> Tensor<T>) -> Self {
        let d = config.d_model;
        let mut linear = |d_in: usize, d_out: usize| LinearParams {
            weight: weight(vec![d_in, d_out]).with_requires_grad(),
            bias: Tensor::zeros(vec![d_out]).with_requires_grad(),
        };
        let norm = |dim: usize| NormParams {
            gamma: Tensor::full(vec![dim], T::one()).with_requires_grad(),
            beta: Tensor::zeros(vec![dim]).with_requires_grad(),
        };
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayer {
                attn_q: linear(d, d),
                attn_k: linear(d, d),
                attn_v: linear(d, d),
                attn_o: linear(d, d),
                attn_norm: norm(d),
                ffn_up: linear(d, config.d_ff),
                ffn_down: linear(config.d_ff, d),
                ffn_norm: norm(d),
            })
            .collect();
        let classifier = linear(d, config.num_labels);
        Self {
            tok_embed: weight(vec![config.vocab_size, d]).with_requires_grad(),
            pos_embed: weight(vec![config.max_len, d]).with_requires_grad(),
            embed_norm: norm(d),
            layers,
            classifier,
            config,
        }
    }

    /// All-zero parameters; the checkpoint loader fills these in.
    pub(crate) fn zeroed(config: ModelConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self::scaffold(config, &mut Tensor::zeros))
    }

    /// Every parameter tensor with its stable name, in a fixed traversal
    /// order shared by the optimizer and the checkpoint manifest.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("tok_embed".into(), &self.tok_embed),
            ("pos_embed".into(), &self.pos_embed),
            ("embed_norm.gamma".into(), &self.embed_norm.gamma),
            ("embed_norm.beta".into(), &self.embed_norm.beta),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let named = [
                ("attn_q", &layer.attn_q),
                ("attn_k", &layer.attn_k),
                ("attn_v", &layer.attn_v),
                ("attn_o", &layer.attn_o),
            ];
            for (name, lin) in named {
                out.push((format!("layers.{i}.{name}.weight"), &lin.weight));
                out.push((format!("layers.{i}.{name}.bias"), &lin.bias));
            }
            out.push((format!("layers.{i}.attn_norm.gamma"), &layer.attn_norm.gamma));
            out.push((format!("layers.{i}.attn_norm.beta"), &layer.attn_norm.beta));
            for (name, lin) in [("ffn_up", &layer.ffn_up), ("ffn_down", &layer.ffn_down)] {
                out.push((format!("layers.{i}.{name}.weight"), &lin.weight));
                out.push((format!("layers.{i}.{name}.bias"), &lin.bias));
            }
            out.push((format!("layers.{i}.ffn_norm.gamma"), &layer.ffn_norm.gamma));
            out.push((format!("layers.{i}.ffn_norm.beta"), &layer.ffn_norm.beta));
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    /// Mutable view over the same parameters in the same order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("tok_embed".into(), &mut self.tok_embed),
            ("pos_embed".into(), &mut self.pos_embed),
            ("embed_norm.gamma".into(), &mut self.embed_norm.gamma),
            ("embed_norm.beta".into(), &mut self.embed_norm.beta),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.attn_q.weight"), &mut layer.attn_q.weight));
            out.push((format!("layers.{i}.attn_q.bias"), &mut layer.attn_q.bias));
            out.push((format!("layers.{i}.attn_k.weight"), &mut layer.attn_k.weight));
            out.push((format!("layers.{i}.attn_k.bias"), &mut layer.attn_k.bias));
            out.push((format!("layers.{i}.attn_v.weight"), &mut layer.attn_v.weight));
            out.push((format!("layers.{i}.attn_v.bias"), &mut layer.attn_v.bias));
            out.push((format!("layers.{i}.attn_o.weight"), &mut layer.attn_o.weight));
            out.push((format!("layers.{i}.attn_o.bias"), &mut layer.attn_o.bias));
            out.push((format!("layers.{i}.attn_norm.gamma"), &mut layer.attn_norm.gamma));
            out.push((format!("layers.{i}.attn_norm.beta"), &mut layer.attn_norm.beta));
            out.push((format!("layers.{i}.ffn_up.weight"), &mut layer.ffn_up.weight));
            out.push((format!("layers.{i}.ffn_up.bias"), &mut layer.ffn_up.bias));
            out.push((format!("layers.{i}.ffn_down.weight"), &mut layer.ffn_down.weight));
            out.push((format!("layers.{i}.ffn_down.bias"), &mut layer.ffn_down.bias));
            out.push((format!("layers.{i}.ffn_norm.gamma"), &mut layer.ffn_norm.gamma));
            out.push((format!("layers.{i}.ffn_norm.beta"), &mut layer.ffn_norm.beta));
        }
        out.push(("classifier.weight".into(), &mut self.classifier.weight));
        out.push(("classifier.bias".into(), &mut self.classifier.bias));
        out
    }
}

/// Deterministically initializes a model: weights from N(0, 0.02^2)
/// truncated at two standard deviations, biases and layer-norm beta zero,
/// layer-norm gamma one.
pub fn init_model<T: Scalar>(config: ModelConfig, seed: u64) -> Result<EncoderModel<T>, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(EncoderModel::scaffold(config, &mut |shape| {
        Tensor::randn_truncated(shape, INIT_STD, &mut rng)
    }))
}

/// Whether a forward pass applies dropout; training mode carries the
/// noise source.
pub enum ForwardMode<'r> {
    Eval,
    Train { dropout_rng: &'r mut ChaCha8Rng },
}

/// A forward graph already built on a tape: the logits node plus the
/// trainable leaves in optimizer order.
pub struct BoundForward {
    pub logits: TensorRef,
    pub trainable: Vec<(String, TensorRef)>,
}

/// Anything the trainer, cross-validation, and QA engine can drive: a
/// plain encoder or a LoRA-wrapped one.
pub trait ClassifierModel<T: Scalar> {
    fn config(&self) -> &ModelConfig;

    /// Builds one forward pass over `batch` on `tape`, returning the
    /// logits node and the trainable parameter leaves in the same order
    /// as [`ClassifierModel::trainable_params`].
    fn bind_forward(
        &self,
        tape: &mut Tape<T>,
        batch: &[Encoding],
        mode: ForwardMode<'_>,
    ) -> Result<BoundForward, TensorError>;

    fn trainable_params(&self) -> Vec<(String, &Tensor<T>)>;

    fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn count_parameters(&self, trainable_only: bool) -> usize;

    /// Dropout-free forward pass on a throwaway tape.
    fn forward_logits(&self, batch: &[Encoding]) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let bound = self.bind_forward(&mut tape, batch, ForwardMode::Eval)?;
        Ok(tape.value(bound.logits))
    }
}

impl<T: Scalar> ClassifierModel<T> for EncoderModel<T> {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn bind_forward(
        &self,
        tape: &mut Tape<T>,
        batch: &[Encoding],
        mode: ForwardMode<'_>,
    ) -> Result<BoundForward, TensorError> {
        let (bound, trainable) = bind_plain(tape, self);
        let logits = run_encoder(tape, &bound, &self.config, batch, mode)?;
        Ok(BoundForward { logits, trainable })
    }

    fn trainable_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.params().into_iter().filter(|(_, t)| t.requires_grad()).collect()
    }

    fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.params_mut().into_iter().filter(|(_, t)| t.requires_grad()).collect()
    }

    fn count_parameters(&self, trainable_only: bool) -> usize {
        self.params()
            .iter()
            .filter(|(_, t)| !trainable_only || t.requires_grad())
            .map(|(_, t)| t.numel())
            .sum()
    }
}

/// Tape bindings for one dense projection, optionally with a low-rank
/// delta `(a, b, alpha/r)` added to its output.
pub(crate) struct BoundLinear {
    pub w: TensorRef,
    pub b: TensorRef,
    pub adapter: Option<(TensorRef, TensorRef, f64)>,
}

pub(crate) struct BoundNorm {
    pub gamma: TensorRef,
    pub beta: TensorRef,
}

pub(crate) struct BoundLayer {
    pub attn_q: BoundLinear,
    pub attn_k: BoundLinear,
    pub attn_v: BoundLinear,
    pub attn_o: BoundLinear,
    pub attn_norm: BoundNorm,
    pub ffn_up: BoundLinear,
    pub ffn_down: BoundLinear,
    pub ffn_norm: BoundNorm,
}

pub(crate) struct BoundEncoder {
    pub tok_embed: TensorRef,
    pub pos_embed: TensorRef,
    pub embed_norm: BoundNorm,
    pub layers: Vec<BoundLayer>,
    pub classifier: BoundLinear,
}

fn bind_tensor<T: Scalar>(
    tape: &mut Tape<T>,
    trainable: &mut Vec<(String, TensorRef)>,
    name: String,
    t: &Tensor<T>,
) -> TensorRef {
    let r = tape.leaf(t);
    if t.requires_grad() {
        trainable.push((name, r));
    }
    r
}

fn bind_linear<T: Scalar>(
    tape: &mut Tape<T>,
    trainable: &mut Vec<(String, TensorRef)>,
    prefix: &str,
    l: &LinearParams<T>,
) -> BoundLinear {
    BoundLinear {
        w: bind_tensor(tape, trainable, format!("{prefix}.weight"), &l.weight),
        b: bind_tensor(tape, trainable, format!("{prefix}.bias"), &l.bias),
        adapter: None,
    }
}

fn bind_norm<T: Scalar>(
    tape: &mut Tape<T>,
    trainable: &mut Vec<(String, TensorRef)>,
    prefix: &str,
    n: &NormParams<T>,
) -> BoundNorm {
    BoundNorm {
        gamma: bind_tensor(tape, trainable, format!("{prefix}.gamma"), &n.gamma),
        beta: bind_tensor(tape, trainable, format!("{prefix}.beta"), &n.beta),
    }
}

/// Puts every model parameter on the tape, collecting `(name, ref)` for
/// the ones that require gradients, in parameter order.
pub(crate) fn bind_plain<T: Scalar>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
) -> (BoundEncoder, Vec<(String, TensorRef)>) {
    let tr = &mut Vec::new();
    let tok_embed = bind_tensor(tape, tr, "tok_embed".into(), &model.tok_embed);
    let pos_embed = bind_tensor(tape, tr, "pos_embed".into(), &model.pos_embed);
    let embed_norm = bind_norm(tape, tr, "embed_norm", &model.embed_norm);
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        layers.push(BoundLayer {
            attn_q: bind_linear(tape, tr, &format!("layers.{i}.attn_q"), &layer.attn_q),
            attn_k: bind_linear(tape, tr, &format!("layers.{i}.attn_k"), &layer.attn_k),
            attn_v: bind_linear(tape, tr, &format!("layers.{i}.attn_v"), &layer.attn_v),
            attn_o: bind_linear(tape, tr, &format!("layers.{i}.attn_o"), &layer.attn_o),
            attn_norm: bind_norm(tape, tr, &format!("layers.{i}.attn_norm"), &layer.attn_norm),
            ffn_up: bind_linear(tape, tr, &format!("layers.{i}.ffn_up"), &layer.ffn_up),
            ffn_down: bind_linear(tape, tr, &format!("layers.{i}.ffn_down"), &layer.ffn_down),
            ffn_norm: bind_norm(tape, tr, &format!("layers.{i}.ffn_norm"), &layer.ffn_norm),
        });
    }
    let classifier = bind_linear(tape, tr, "classifier", &model.classifier);
    (
        BoundEncoder { tok_embed, pos_embed, embed_norm, layers, classifier },
        std::mem::take(tr),
    )
}

/// `y = x W + bias (+ (alpha/r) (x A^T) B^T when adapted)`.
pub(crate) fn linear<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    lin: &BoundLinear,
) -> Result<TensorRef, TensorError> {
    let y = tape.matmul(x, lin.w)?;
    let y = tape.add_bias_row(y, lin.b)?;
    match lin.adapter {
        None => Ok(y),
        Some((a, b, scale)) => {
            let xa = tape.matmul_nt(x, a)?;
            let delta = tape.matmul_nt(xa, b)?;
            let scaled = tape.scale(delta, T::from_f64(scale))?;
            tape.add(y, scaled)
        }
    }
}

fn apply_dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: TensorRef,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorRef, TensorError> {
    let Some(rng) = rng.as_deref_mut() else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let data: Vec<T> = (0..tape.data(x).len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = tape.constant(tape.shape(x).to_vec(), data)?;
    tape.mul(x, mask)
}

/// Builds the full encoder graph for a batch and returns the logits node
/// `[batch x num_labels]`.
pub(crate) fn run_encoder<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundEncoder,
    config: &ModelConfig,
    batch: &[Encoding],
    mode: ForwardMode<'_>,
) -> Result<TensorRef, TensorError> {
    let b = batch.len();
    let s = config.max_len;
    let d = config.d_model;
    let heads = config.num_heads;
    let d_head = d / heads;
    if b == 0 {
        return Err(TensorError::ShapeMismatch { op: "forward", details: "empty batch".into() });
    }
    let mut ids = Vec::with_capacity(b * s);
    for (i, enc) in batch.iter().enumerate() {
        if enc.ids.len() != s || enc.mask.len() != s {
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                details: format!(
                    "encoding {} has length {}/{} but the model expects max_len {}",
                    i,
                    enc.ids.len(),
                    enc.mask.len(),
                    s
                ),
            });
        }
        if let Some(&bad) = enc.ids.iter().find(|&&id| id >= config.vocab_size) {
            return Err(TensorError::ShapeMismatch {
                op: "forward",
                details: format!("token id {} exceeds vocab_size {}", bad, config.vocab_size),
            });
        }
        ids.extend_from_slice(&enc.ids);
    }
    let mut dropout_rng = match mode {
        ForwardMode::Eval => None,
        ForwardMode::Train { dropout_rng } => Some(dropout_rng),
    };

    // Embeddings: token + position, layer norm, dropout.
    let tok = tape.gather_rows(bound.tok_embed, &ids)?;
    let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let pos = tape.gather_rows(bound.pos_embed, &pos_ids)?;
    let sum = tape.add(tok, pos)?;
    let normed = tape.layer_norm(sum, bound.embed_norm.gamma, bound.embed_norm.beta)?;
    let mut x = apply_dropout(tape, normed, config.dropout, &mut dropout_rng)?;

    // One additive key bias per sequence, shared across layers and heads:
    // 0 on real tokens, -1e9 on padding.
    let mask_bias: Vec<TensorRef> = batch
        .iter()
        .map(|enc| {
            let data: Vec<T> = enc
                .mask
                .iter()
                .map(|&m| if m == 1 { T::zero() } else { T::from_f64(MASK_BIAS) })
                .collect();
            tape.constant(vec![s], data)
        })
        .collect::<Result<_, _>>()?;

    let inv_sqrt_dh = T::from_f64(1.0 / (d_head as f64).sqrt());
    for layer in &bound.layers {
        let q = linear(tape, x, &layer.attn_q)?;
        let k = linear(tape, x, &layer.attn_k)?;
        let v = linear(tape, x, &layer.attn_v)?;
        let mut seq_ctx = Vec::with_capacity(b);
        for i in 0..b {
            let qs = tape.slice_rows(q, i * s, s)?;
            let ks = tape.slice_rows(k, i * s, s)?;
            let vs = tape.slice_rows(v, i * s, s)?;
            let mut head_ctx = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(qs, h * d_head, d_head)?;
                let kh = tape.slice_cols(ks, h * d_head, d_head)?;
                let vh = tape.slice_cols(vs, h * d_head, d_head)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scaled = tape.scale(scores, inv_sqrt_dh)?;
                let biased = tape.add_bias_row(scaled, mask_bias[i])?;
                let probs = tape.softmax(biased)?;
                head_ctx.push(tape.matmul(probs, vh)?);
            }
            seq_ctx.push(tape.concat_cols(&head_ctx)?);
        }
        let ctx = tape.concat_rows(&seq_ctx)?;
        let attn_out = linear(tape, ctx, &layer.attn_o)?;
        let attn_out = apply_dropout(tape, attn_out, config.dropout, &mut dropout_rng)?;
        let res = tape.add(x, attn_out)?;
        x = tape.layer_norm(res, layer.attn_norm.gamma, layer.attn_norm.beta)?;

        let up = linear(tape, x, &layer.ffn_up)?;
        let act = tape.gelu(up)?;
        let down = linear(tape, act, &layer.ffn_down)?;
        let down = apply_dropout(tape, down, config.dropout, &mut dropout_rng)?;
        let res = tape.add(x, down)?;
        x = tape.layer_norm(res, layer.ffn_norm.gamma, layer.ffn_norm.beta)?;
    }

    // Pooling: the final hidden state at each sequence's [CLS] position.
    let cls_positions: Vec<usize> = (0..b).map(|i| i * s).collect();
    let pooled = tape.gather_rows(x, &cls_positions)?;
    linear(tape, pooled, &bound.classifier)
}
