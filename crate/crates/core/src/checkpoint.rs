//! Binary model checkpoints (".mqf").
//!
//! Layout: 8-byte magic `MQFCKPT1`, a 4-byte little-endian header
//! length, a UTF-8 JSON header (model config, vocabulary content tokens,
//! label names, optional adapter section, and a tensor manifest of
//! name/shape/byte-offset triples), then every tensor's data as
//! little-endian IEEE-754 `f32`, concatenated in manifest order. Saving
//! and loading an `f32` model is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabelIndex;
use crate::encoder::{
    BoundForward, ClassifierModel, ConfigError, EncoderModel, ForwardMode, ModelConfig,
};
use crate::lora::{wrap_with_lora, LoraConfig, LoraModel};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};
use crate::tokenizer::{Encoding, Vocab};

pub const MAGIC: &[u8; 8] = b"MQFCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {MAGIC:?}, found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("truncated header: {details}")]
    TruncatedHeader { details: String },
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("truncated payload: manifest needs {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("manifest mismatch for {name:?}: {details}")]
    ManifestMismatch { name: String, details: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    vocab: Vec<String>,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lora: Option<LoraConfig>,
    manifest: Vec<TensorEntry>,
}

/// A checkpointable classifier: either a plain encoder or a LoRA-wrapped
/// one. Delegates the whole [`ClassifierModel`] surface.
#[derive(Debug, Clone)]
pub enum AnyModel<T: Scalar> {
    Plain(EncoderModel<T>),
    Lora(LoraModel<T>),
}

impl<T: Scalar> AnyModel<T> {
    /// Every tensor that belongs in a checkpoint, in manifest order:
    /// base parameters first, adapter pairs after.
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            AnyModel::Plain(m) => m.params(),
            AnyModel::Lora(m) => {
                let mut out = m.base.params();
                for ad in &m.adapters {
                    out.push((format!("{}.a", ad.name()), &ad.a));
                    out.push((format!("{}.b", ad.name()), &ad.b));
                }
                out
            }
        }
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match self {
            AnyModel::Plain(m) => m.params_mut(),
            AnyModel::Lora(m) => {
                let mut out = m.base.params_mut();
                for ad in &mut m.adapters {
                    let name = ad.name();
                    out.push((format!("{name}.a"), &mut ad.a));
                    out.push((format!("{name}.b"), &mut ad.b));
                }
                out
            }
        }
    }

    fn lora_config(&self) -> Option<&LoraConfig> {
        match self {
            AnyModel::Plain(_) => None,
            AnyModel::Lora(m) => Some(&m.lora_config),
        }
    }
}

impl<T: Scalar> ClassifierModel<T> for AnyModel<T> {
    fn config(&self) -> &ModelConfig {
        match self {
            AnyModel::Plain(m) => m.config(),
            AnyModel::Lora(m) => m.config(),
        }
    }

    fn bind_forward(
        &self,
        tape: &mut Tape<T>,
        batch: &[Encoding],
        mode: ForwardMode<'_>,
    ) -> Result<BoundForward, TensorError> {
        match self {
            AnyModel::Plain(m) => m.bind_forward(tape, batch, mode),
            AnyModel::Lora(m) => m.bind_forward(tape, batch, mode),
        }
    }

    fn trainable_params(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            AnyModel::Plain(m) => m.trainable_params(),
            AnyModel::Lora(m) => m.trainable_params(),
        }
    }

    fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match self {
            AnyModel::Plain(m) => m.trainable_params_mut(),
            AnyModel::Lora(m) => m.trainable_params_mut(),
        }
    }

    fn count_parameters(&self, trainable_only: bool) -> usize {
        match self {
            AnyModel::Plain(m) => m.count_parameters(trainable_only),
            AnyModel::Lora(m) => m.count_parameters(trainable_only),
        }
    }
}

/// Everything a checkpoint restores.
#[derive(Debug)]
pub struct LoadedCheckpoint<T: Scalar> {
    pub model: AnyModel<T>,
    pub vocab: Vocab,
    pub labels: LabelIndex,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.to_path_buf(), source }
}

/// Writes the model with its vocabulary and label set. Tensor data is
/// stored as `f32` regardless of the in-memory scalar type.
pub fn save_checkpoint<T: Scalar>(
    model: &AnyModel<T>,
    vocab: &Vocab,
    labels: &LabelIndex,
    path: &Path,
) -> Result<(), CheckpointError> {
    let tensors = model.tensors();
    let mut manifest = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in &tensors {
        manifest.push(TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += 4 * t.numel() as u64;
    }
    let header = CheckpointHeader {
        config: model.config().clone(),
        vocab: vocab.content_tokens().to_vec(),
        labels: labels.labels().to_vec(),
        lora: model.lora_config().cloned(),
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    (|| {
        w.write_all(MAGIC)?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for (_, t) in &tensors {
            for &v in t.data() {
                w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(path))?;
    Ok(())
}

/// Reads a checkpoint back, validating magic, header, manifest shapes,
/// and payload size. Trainability flags are reconstructed: plain models
/// come back fully trainable, adapted models with a frozen base.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LoadedCheckpoint<T>, CheckpointError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;

    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let found = bytes[..bytes.len().min(MAGIC.len())].to_vec();
        return Err(CheckpointError::BadMagic { found });
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::TruncatedHeader {
            details: format!("length field missing (file is {} bytes)", bytes.len()),
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::TruncatedHeader {
            details: format!("declared {header_len} bytes, found {}", bytes.len() - 12),
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..header_end])?;
    let payload = &bytes[header_end..];

    header.config.validate()?;
    let mut model = match &header.lora {
        None => AnyModel::Plain(EncoderModel::zeroed(header.config.clone())?),
        Some(lora) => {
            let base = EncoderModel::zeroed(header.config.clone())?;
            AnyModel::Lora(wrap_with_lora(base, lora.clone(), 0)?)
        }
    };

    let mut tensors = model.tensors_mut();
    if header.manifest.len() != tensors.len() {
        return Err(CheckpointError::ManifestMismatch {
            name: String::new(),
            details: format!(
                "manifest lists {} tensors but the model has {}",
                header.manifest.len(),
                tensors.len()
            ),
        });
    }
    let mut expected_offset = 0u64;
    let mut total = 0usize;
    for (entry, (name, tensor)) in header.manifest.iter().zip(tensors.iter()) {
        if entry.name != *name {
            return Err(CheckpointError::ManifestMismatch {
                name: entry.name.clone(),
                details: format!("expected tensor {name:?} at this manifest position"),
            });
        }
        if entry.shape != tensor.shape() {
            return Err(CheckpointError::ManifestMismatch {
                name: entry.name.clone(),
                details: format!("shape {:?} does not match the model's {:?}", entry.shape, tensor.shape()),
            });
        }
        if entry.offset != expected_offset {
            return Err(CheckpointError::ManifestMismatch {
                name: entry.name.clone(),
                details: format!("offset {} does not match the running total {expected_offset}", entry.offset),
            });
        }
        expected_offset += 4 * tensor.numel() as u64;
        total += tensor.numel();
    }
    if payload.len() < 4 * total {
        return Err(CheckpointError::TruncatedPayload { expected: 4 * total, found: payload.len() });
    }
    if payload.len() > 4 * total {
        return Err(CheckpointError::ManifestMismatch {
            name: String::new(),
            details: format!("{} trailing payload bytes beyond the manifest", payload.len() - 4 * total),
        });
    }

    let mut cursor = 0usize;
    for (_, tensor) in tensors.iter_mut() {
        for v in tensor.data_mut().iter_mut() {
            let raw: [u8; 4] = payload[cursor..cursor + 4].try_into().unwrap();
            *v = T::from_f64(f32::from_le_bytes(raw) as f64);
            cursor += 4;
        }
    }

    Ok(LoadedCheckpoint {
        model,
        vocab: Vocab::from_content_tokens(header.vocab),
        labels: LabelIndex::from_labels(header.labels),
    })
}
