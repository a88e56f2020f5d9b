//! The deployed two-stage pipeline: classify a question into a label,
//! then return the predefined answer stored for that label.
//!
//! [`predict_label`] runs the classifier and reports the argmax label
//! with its softmax probability. [`answer_question`] adds the second
//! stage: a lookup in the [`AnswerBank`], guarded by an optional
//! confidence threshold whose fallback keeps the label visible while
//! declining to answer.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{AnswerRecord, LabelIndex};
use crate::encoder::ClassifierModel;
use crate::scalar::Scalar;
use crate::tensor::TensorError;
use crate::tokenizer::{encode, tokenize, Vocab};

/// Label → (disease, answer) lookup built from the secondary dataset.
#[derive(Debug, Clone, Default)]
pub struct AnswerBank {
    entries: BTreeMap<String, (String, String)>,
}

impl AnswerBank {
    /// Builds a bank from answer records. Duplicate labels and empty
    /// answers are rejected by name.
    pub fn from_records(records: &[AnswerRecord]) -> Result<Self, QaError> {
        let mut entries = BTreeMap::new();
        for r in records {
            if r.label.is_empty() || r.answer.is_empty() {
                return Err(QaError::EmptyBankEntry { label: r.label.clone() });
            }
            if entries.insert(r.label.clone(), (r.disease.clone(), r.answer.clone())).is_some() {
                return Err(QaError::DuplicateLabel { label: r.label.clone() });
            }
        }
        Ok(Self { entries })
    }

    pub fn answer(&self, label: &str) -> Option<&str> {
        self.entries.get(label).map(|(_, a)| a.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labels the classifier can emit that have no bank entry. A
    /// non-empty result means some predictions could never be answered;
    /// callers surface it as a warning at load time.
    pub fn missing_labels(&self, labels: &LabelIndex) -> Vec<String> {
        labels.labels().iter().filter(|l| !self.entries.contains_key(*l)).cloned().collect()
    }
}

/// The pipeline's reply to one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QAResponse {
    pub label: String,
    /// Maximum softmax probability of the logits behind `label`; always
    /// in (0, 1].
    pub confidence: f64,
    /// `Some` bank answer, or `None` when confidence fell below the
    /// threshold (see [`QAResponse::answer_text`]).
    pub answer: Option<String>,
}

/// Printed in place of an answer when confidence is below threshold.
pub const FALLBACK_ANSWER: &str = "no confident answer";

impl QAResponse {
    /// The answer text, or the fallback marker when below threshold.
    pub fn answer_text(&self) -> &str {
        self.answer.as_deref().unwrap_or(FALLBACK_ANSWER)
    }
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("question is empty after normalization")]
    EmptyQuestion,
    #[error("predicted label {label:?} has no answer in the bank")]
    UnmappedLabel { label: String },
    #[error("answer bank entry for label {label:?} has an empty field")]
    EmptyBankEntry { label: String },
    #[error("duplicate label {label:?} in the answer bank")]
    DuplicateLabel { label: String },
    #[error("label id {id} is outside the label index (size {size})")]
    LabelIdOutOfRange { id: usize, size: usize },
    #[error(transparent)]
    Numeric(#[from] TensorError),
}

/// Classifies one question: softmax over the model's logits, argmax
/// label, and that argmax's probability as confidence. Ties break toward
/// the lower label id. A question with no tokens after normalization is
/// an input error.
pub fn predict_label<T: Scalar, M: ClassifierModel<T>>(
    model: &M,
    vocab: &Vocab,
    labels: &LabelIndex,
    question: &str,
) -> Result<(String, f64), QaError> {
    if tokenize(question).is_empty() {
        return Err(QaError::EmptyQuestion);
    }
    let encoding = encode(question, vocab, model.config().max_len);
    let logits = model.forward_logits(&[encoding])?;

    // Softmax in f64 with the max-subtraction trick; argmax keeps the
    // first (lowest-id) maximum.
    let row: Vec<f64> = logits.data().iter().map(|&v| v.to_f64()).collect();
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let mut best = 0usize;
    for (i, &e) in exps.iter().enumerate() {
        if e > exps[best] {
            best = i;
        }
    }
    let confidence = exps[best] / denom;
    let label = labels
        .label(best)
        .ok_or(QaError::LabelIdOutOfRange { id: best, size: labels.len() })?
        .to_string();
    Ok((label, confidence))
}

/// The full two-stage answer: classify, then look the label up in the
/// bank. Confidence below `threshold` yields the fallback response with
/// the label still reported; a label missing from the bank is a
/// configuration error naming the label.
pub fn answer_question<T: Scalar, M: ClassifierModel<T>>(
    model: &M,
    vocab: &Vocab,
    labels: &LabelIndex,
    bank: &AnswerBank,
    question: &str,
    threshold: f64,
) -> Result<QAResponse, QaError> {
    let (label, confidence) = predict_label(model, vocab, labels, question)?;
    if confidence < threshold {
        return Ok(QAResponse { label, confidence, answer: None });
    }
    match bank.answer(&label) {
        Some(text) => Ok(QAResponse { label, confidence, answer: Some(text.to_string()) }),
        None => Err(QaError::UnmappedLabel { label }),
    }
}
