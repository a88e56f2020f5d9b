//! Core library for a two-stage medical question answering system.
//!
//! Stage one classifies a natural-language question into an intent label
//! ("disease + aspect") with a small transformer encoder trained from
//! scratch, optionally through low-rank adapters. Stage two maps the
//! predicted label to a predefined answer from a curated bank.
//!
//! The numeric core (tensors, autodiff tape, model, optimizer) is generic
//! over [`Scalar`], so the same code runs in `f32` for training and in
//! `f64` for gradient checking.

pub mod checkpoint;
pub mod crossval;
pub mod data;
pub mod encoder;
pub mod gradcheck;
pub mod lora;
pub mod metrics;
pub mod qa;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, AnyModel};
pub use crossval::{aggregate_summary, run_cross_validation, CVSummary, CvOptions, SummaryMode};
pub use encoder::{ClassifierModel, EncoderModel, ModelConfig, Variant};
pub use lora::{merge_lora, wrap_with_lora, LoraConfig, LoraModel, TargetMatrix};
pub use qa::{answer_question, predict_label, AnswerBank, QAResponse};
pub use scalar::Scalar;
pub use tape::{Tape, TensorRef};
pub use tensor::{Tensor, TensorError};
pub use train::{fit, TrainConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type EncoderModel32 = EncoderModel<f32>;
pub type EncoderModel64 = EncoderModel<f64>;
pub type LoraModel32 = LoraModel<f32>;
pub type LoraModel64 = LoraModel<f64>;
