//! Round-trip and corruption behavior of the ".mqf" checkpoint format.

use std::fs;
use std::path::Path;

use medqa_core::checkpoint::CheckpointError;
use medqa_core::encoder::{init_model, ModelConfig};
use medqa_core::data::LabelIndex;
use medqa_core::tokenizer::{build_vocab, encode, Vocab};
use medqa_core::{
    load_checkpoint, save_checkpoint, wrap_with_lora, AnyModel, ClassifierModel, EncoderModel,
    LoraConfig,
};

fn fixture() -> (AnyModel<f32>, Vocab, LabelIndex, Vec<medqa_core::tokenizer::Encoding>) {
    let corpus = [
        "what is anemia",
        "what causes asthma",
        "symptoms of anemia",
        "how is asthma treated",
    ];
    let vocab = build_vocab(corpus.iter().copied(), 1, 64);
    let labels = LabelIndex::from_labels(["anemia definition", "asthma causes", "anemia symptoms"]);
    let cfg = ModelConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: vocab.size(),
        max_len: 8,
        num_labels: labels.len(),
        dropout: 0.1,
        variant_name: "mini-roberta-base".into(),
    };
    let model: EncoderModel<f32> = init_model(cfg, 13).unwrap();
    let batch = vec![
        encode("what is anemia", &vocab, 8),
        encode("what causes asthma exactly", &vocab, 8),
    ];
    (AnyModel::Plain(model), vocab, labels, batch)
}

#[test]
fn plain_model_round_trips_bit_exactly() {
    let (model, vocab, labels, batch) = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mqf");
    save_checkpoint(&model, &vocab, &labels, &path).unwrap();

    let loaded = load_checkpoint::<f32>(&path).unwrap();
    let AnyModel::Plain(ref original) = model else { unreachable!() };
    let AnyModel::Plain(ref restored) = loaded.model else {
        panic!("plain checkpoint came back wrapped")
    };
    assert_eq!(restored.config, original.config);
    for ((name, a), (_, b)) in original.params().iter().zip(restored.params().iter()) {
        assert_eq!(a.shape(), b.shape(), "{name}");
        assert_eq!(a.data(), b.data(), "{name}");
        assert!(b.requires_grad(), "{name} should be trainable after load");
    }
    assert_eq!(loaded.vocab.content_tokens(), vocab.content_tokens());
    assert_eq!(loaded.labels.labels(), labels.labels());

    let before = model.forward_logits(&batch).unwrap();
    let after = loaded.model.forward_logits(&batch).unwrap();
    assert_eq!(before.data(), after.data());
}

#[test]
fn adapted_model_round_trips_with_flags_and_config() {
    let (model, vocab, labels, batch) = fixture();
    let AnyModel::Plain(base) = model else { unreachable!() };
    let mut wrapped = wrap_with_lora(base, LoraConfig::default(), 5).unwrap();
    for ad in &mut wrapped.adapters {
        for v in ad.b.data_mut() {
            *v = 0.03;
        }
    }
    let model = AnyModel::Lora(wrapped);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mqf");
    save_checkpoint(&model, &vocab, &labels, &path).unwrap();

    let loaded = load_checkpoint::<f32>(&path).unwrap();
    let AnyModel::Lora(ref original) = model else { unreachable!() };
    let AnyModel::Lora(ref restored) = loaded.model else {
        panic!("adapted checkpoint came back plain")
    };
    assert_eq!(restored.lora_config, original.lora_config);
    assert_eq!(restored.adapters.len(), original.adapters.len());
    for (a, b) in original.adapters.iter().zip(&restored.adapters) {
        assert_eq!(a.a.data(), b.a.data());
        assert_eq!(a.b.data(), b.b.data());
        assert!(b.a.requires_grad() && b.b.requires_grad());
    }
    for (name, t) in restored.base.params() {
        assert_eq!(t.requires_grad(), name.starts_with("classifier."), "{name}");
    }
    let before = model.forward_logits(&batch).unwrap();
    let after = loaded.model.forward_logits(&batch).unwrap();
    assert_eq!(before.data(), after.data());
}

fn saved_fixture(dir: &Path) -> std::path::PathBuf {
    let (model, vocab, labels, _) = fixture();
    let path = dir.join("model.mqf");
    save_checkpoint(&model, &vocab, &labels, &path).unwrap();
    path
}

#[test]
fn corrupted_magic_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_fixture(dir.path());
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(CheckpointError::BadMagic { .. })));
}

#[test]
fn truncated_payload_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_fixture(dir.path());
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    match load_checkpoint::<f32>(&path) {
        Err(CheckpointError::TruncatedPayload { expected, found }) => {
            assert_eq!(expected, found + 4);
        }
        other => panic!("expected TruncatedPayload, got {other:?}"),
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_fixture(dir.path());
    let mut bytes = fs::read(&path).unwrap();
    bytes.extend_from_slice(&[0, 0, 0, 0]);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_checkpoint::<f32>(&path),
        Err(CheckpointError::ManifestMismatch { .. })
    ));
}

#[test]
fn truncated_header_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_fixture(dir.path());
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..40]).unwrap();
    assert!(matches!(
        load_checkpoint::<f32>(&path),
        Err(CheckpointError::TruncatedHeader { .. })
    ));
}

#[test]
fn manifest_shape_mismatch_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_fixture(dir.path());
    let bytes = fs::read(&path).unwrap();
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
    // Claim a different shape for the first tensor without touching data.
    header["manifest"][0]["shape"] = serde_json::json!([1, 1]);
    let new_header = serde_json::to_vec(&header).unwrap();
    let mut out = Vec::new();
    out.extend_from_slice(&bytes[..8]);
    out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
    out.extend_from_slice(&new_header);
    out.extend_from_slice(&bytes[12 + header_len..]);
    fs::write(&path, &out).unwrap();
    match load_checkpoint::<f32>(&path) {
        Err(CheckpointError::ManifestMismatch { name, .. }) => assert_eq!(name, "tok_embed"),
        other => panic!("expected ManifestMismatch, got {other:?}"),
    }
}

#[test]
fn malformed_header_json_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_fixture(dir.path());
    let mut bytes = fs::read(&path).unwrap();
    bytes[13] = b'!';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(CheckpointError::Header(_))));
}

#[test]
fn missing_file_reports_the_path() {
    let err = load_checkpoint::<f32>(Path::new("/nonexistent/model.mqf")).unwrap_err();
    let CheckpointError::Io { path, .. } = err else { panic!("expected Io, got {err:?}") };
    assert!(path.ends_with("model.mqf"));
}
