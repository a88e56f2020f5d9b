//! Behavior of the epoch loop: determinism, purity, convergence on
//! small instances, descent sanity, and failure diagnostics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use medqa_core::data::{
    default_diseases, default_templates, generate_synthetic, kfold_split, LabelIndex,
};
use medqa_core::encoder::{init_model, ClassifierModel, ModelConfig};
use medqa_core::tokenizer::{build_vocab, Vocab};
use medqa_core::train::{
    encode_records, evaluate_epoch, fit, train_epoch, AdamW, LabeledExample, TrainConfig,
    TrainError,
};
use medqa_core::{wrap_with_lora, EncoderModel, LoraConfig, Tape};

/// Two-label, eight-example set separated by a single keyword.
fn toy_set() -> (Vec<LabeledExample>, Vocab, ModelConfig) {
    let questions = [
        ("what is redwood", 0),
        ("tell me about redwood", 0),
        ("redwood overview please", 0),
        ("describe redwood for me", 0),
        ("what is granite", 1),
        ("tell me about granite", 1),
        ("granite overview please", 1),
        ("describe granite for me", 1),
    ];
    let vocab = build_vocab(questions.iter().map(|(q, _)| *q), 1, 64);
    let cfg = ModelConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 16,
        d_ff: 32,
        vocab_size: vocab.size(),
        max_len: 8,
        num_labels: 2,
        dropout: 0.0,
        variant_name: "mini-roberta-base".into(),
    };
    let examples = questions
        .iter()
        .map(|(q, label)| LabeledExample {
            encoding: medqa_core::tokenizer::encode(q, &vocab, cfg.max_len),
            label: *label,
        })
        .collect();
    (examples, vocab, cfg)
}

fn param_snapshot<T: medqa_core::Scalar, M: ClassifierModel<T>>(model: &M) -> Vec<Vec<T>> {
    model.trainable_params().iter().map(|(_, t)| t.data().to_vec()).collect()
}

#[test]
fn zero_learning_rate_changes_nothing_and_loss_matches_eval_mode() {
    let (examples, _, cfg) = toy_set();
    let mut model: EncoderModel<f64> = init_model(cfg, 3).unwrap();
    let before = param_snapshot(&model);

    // Direct cross-entropy of the full set with dropout off.
    let batch: Vec<_> = examples.iter().map(|e| e.encoding.clone()).collect();
    let targets: Vec<_> = examples.iter().map(|e| e.label).collect();
    let mut tape = Tape::new();
    let bound = model
        .bind_forward(&mut tape, &batch, medqa_core::encoder::ForwardMode::Eval)
        .unwrap();
    let loss_ref = tape.cross_entropy(bound.logits, &targets).unwrap();
    let eval_loss = tape.scalar_value(loss_ref).unwrap();

    // train_epoch is the mechanism; the lr > 0 invariant is enforced at
    // the fit boundary, so a zero-lr epoch is observable here.
    let train_cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: examples.len(),
        shuffle: false,
        ..TrainConfig::default()
    };
    let mut opt = AdamW::new(&train_cfg);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(0);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(1);
    let loss = train_epoch(
        &mut model,
        &examples,
        &train_cfg,
        &mut opt,
        &mut shuffle_rng,
        &mut dropout_rng,
        1,
    )
    .unwrap();
    assert_eq!(param_snapshot(&model), before);
    assert!((loss - eval_loss).abs() < 1e-12);
}

#[test]
fn identical_seeds_reproduce_losses_metrics_and_parameters() {
    let (examples, _, cfg) = toy_set();
    let (train, val) = examples.split_at(6);
    let train_cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
    let run = || {
        let mut model: EncoderModel<f32> = init_model(cfg.clone(), 7).unwrap();
        let history = fit(&mut model, train, val, &train_cfg, 0).unwrap();
        (history, param_snapshot(&model))
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(p1, p2);
    for (a, b) in h1.iter().zip(&h2) {
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.val, b.val);
    }
}

#[test]
fn toy_set_is_memorized_within_ten_epochs() {
    let (examples, _, cfg) = toy_set();
    let mut model: EncoderModel<f32> = init_model(cfg, 11).unwrap();
    let train_cfg = TrainConfig {
        epochs: 10,
        batch_size: 4,
        learning_rate: 0.03,
        ..TrainConfig::default()
    };
    let history = fit(&mut model, &examples, &examples, &train_cfg, 0).unwrap();
    let final_loss = history.last().unwrap().train_loss;
    assert!(final_loss < 0.05, "final train loss {final_loss}");
    // A memorizing model scores perfectly on what it memorized.
    let metrics = evaluate_epoch(&model, &examples, 8).unwrap();
    assert_eq!(
        (metrics.accuracy, metrics.precision, metrics.recall, metrics.f1),
        (1.0, 1.0, 1.0, 1.0)
    );
}

#[test]
fn untrained_two_label_model_scores_near_chance() {
    let (examples, _, cfg) = toy_set();
    // 50 balanced examples by cycling the toy encodings.
    let balanced: Vec<LabeledExample> =
        (0..50).map(|i| examples[i % examples.len()].clone()).collect();
    let model: EncoderModel<f32> = init_model(cfg, 1234).unwrap();
    let metrics = evaluate_epoch(&model, &balanced, 16).unwrap();
    assert!(
        (0.2..=0.8).contains(&metrics.accuracy),
        "untrained accuracy {}",
        metrics.accuracy
    );
}

#[test]
fn evaluation_is_pure() {
    let (examples, _, cfg) = toy_set();
    let model: EncoderModel<f32> = init_model(cfg, 2).unwrap();
    let before = param_snapshot(&model);
    let m1 = evaluate_epoch(&model, &examples, 3).unwrap();
    let m2 = evaluate_epoch(&model, &examples, 3).unwrap();
    assert_eq!(param_snapshot(&model), before);
    assert_eq!(m1, m2);
}

#[test]
fn fit_produces_dense_epoch_indices_and_monotonic_wall_time() {
    let (examples, _, cfg) = toy_set();
    let mut model: EncoderModel<f32> = init_model(cfg, 5).unwrap();
    let train_cfg = TrainConfig { epochs: 10, batch_size: 4, ..TrainConfig::default() };
    let history = fit(&mut model, &examples, &examples, &train_cfg, 3).unwrap();
    assert_eq!(history.len(), 10);
    let mut last = 0.0;
    for (i, epoch) in history.iter().enumerate() {
        assert_eq!(epoch.epoch, i + 1);
        assert_eq!(epoch.fold, 3);
        assert!(epoch.wall_time_s > 0.0);
        assert!(epoch.wall_time_s >= last);
        last = epoch.wall_time_s;
    }
}

#[test]
fn adapted_training_moves_adapters_but_never_the_frozen_base() {
    let (examples, _, cfg) = toy_set();
    let base: EncoderModel<f32> = init_model(cfg, 9).unwrap();
    let frozen_before: Vec<Vec<f32>> = base
        .params()
        .iter()
        .filter(|(n, _)| !n.starts_with("classifier."))
        .map(|(_, t)| t.data().to_vec())
        .collect();
    let mut wrapped = wrap_with_lora(base, LoraConfig::default(), 17).unwrap();
    let adapters_before: Vec<Vec<f32>> =
        wrapped.adapters.iter().map(|ad| ad.b.data().to_vec()).collect();
    let train_cfg =
        TrainConfig { epochs: 3, batch_size: 4, learning_rate: 0.01, ..TrainConfig::default() };
    fit(&mut wrapped, &examples, &examples, &train_cfg, 0).unwrap();
    let frozen_after: Vec<Vec<f32>> = wrapped
        .base
        .params()
        .iter()
        .filter(|(n, _)| !n.starts_with("classifier."))
        .map(|(_, t)| t.data().to_vec())
        .collect();
    assert_eq!(frozen_before, frozen_after);
    let adapters_after: Vec<Vec<f32>> =
        wrapped.adapters.iter().map(|ad| ad.b.data().to_vec()).collect();
    assert_ne!(adapters_before, adapters_after);
}

/// With a tiny learning rate and dropout off, one optimizer step on a
/// batch almost always lowers that batch's loss.
#[test]
fn small_steps_descend_the_batch_loss()  {
    let (examples, _, cfg) = toy_set();
    let batch: Vec<_> = examples.iter().map(|e| e.encoding.clone()).collect();
    let targets: Vec<_> = examples.iter().map(|e| e.label).collect();
    let mut violations = 0;
    let mut total = 0;
    for seed in 0..5u64 {
        let mut model: EncoderModel<f64> = init_model(cfg.clone(), seed).unwrap();
        let train_cfg = TrainConfig {
            learning_rate: 1e-5,
            batch_size: examples.len(),
            shuffle: false,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&train_cfg);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let loss_of = |model: &EncoderModel<f64>| {
            let mut tape = Tape::new();
            let bound = model
                .bind_forward(&mut tape, &batch, medqa_core::encoder::ForwardMode::Eval)
                .unwrap();
            let l = tape.cross_entropy(bound.logits, &targets).unwrap();
            tape.scalar_value(l).unwrap()
        };
        for epoch in 1..=20 {
            let before = loss_of(&model);
            train_epoch(
                &mut model,
                &examples,
                &train_cfg,
                &mut opt,
                &mut shuffle_rng,
                &mut dropout_rng,
                epoch,
            )
            .unwrap();
            if loss_of(&model) >= before {
                violations += 1;
            }
            total += 1;
        }
    }
    assert!(
        violations as f64 / total as f64 <= 0.01,
        "{violations}/{total} non-descending steps"
    );
}

#[test]
fn non_finite_values_abort_with_epoch_and_batch() {
    let (examples, _, cfg) = toy_set();
    let mut model: EncoderModel<f32> = init_model(cfg, 0).unwrap();
    model.tok_embed.data_mut()[0] = f32::INFINITY;
    let err = fit(&mut model, &examples, &examples, &TrainConfig::default(), 0).unwrap_err();
    match &err {
        TrainError::Numeric { epoch: 1, .. } => {}
        other => panic!("expected Numeric at epoch 1, got {other:?}"),
    }
    assert!(err.to_string().contains("epoch 1"));
}

#[test]
fn unknown_label_is_reported_by_name() {
    let (records, _) =
        generate_synthetic(&default_diseases(), &default_templates(), 0).unwrap();
    let vocab = build_vocab(records.iter().map(|r| r.question.as_str()), 1, 512);
    let narrow = LabelIndex::from_labels(["anemia definition"]);
    let err = encode_records(&records, &vocab, &narrow, 12).unwrap_err();
    let TrainError::UnknownLabel { label } = err else { panic!("wrong error: {err:?}") };
    assert!(!label.is_empty());
}

/// End-to-end convergence on one stratified fold of the synthetic
/// template set: every validation label has its other template variant
/// in training, so a converged model transfers across paraphrases. At
/// this scale the model trains from random weights, which takes more
/// than the 10-epoch default; 30 epochs reaches 1.000 here and the test
/// asserts ≥ 0.90 to leave margin for platform float differences.
#[test]
fn synthetic_fold_reaches_high_validation_accuracy() {
    let (records, _) =
        generate_synthetic(&default_diseases(), &default_templates(), 0).unwrap();
    assert_eq!(records.len(), 160);
    let vocab = build_vocab(records.iter().map(|r| r.question.as_str()), 1, 512);
    let labels = LabelIndex::from_records(&records);
    assert_eq!(labels.len(), 80);

    let plan = kfold_split(&records, 5, 42, true).unwrap();
    let cfg = ModelConfig::for_variant(
        medqa_core::Variant::MiniRobertaBase,
        vocab.size(),
        12,
        labels.len(),
    );
    let mut model: EncoderModel<f32> = init_model(cfg, 42).unwrap();
    let all = encode_records(&records, &vocab, &labels, 12).unwrap();
    let train: Vec<_> = plan.training_indices(0).iter().map(|&i| all[i].clone()).collect();
    let val: Vec<_> = plan.validation_indices(0).iter().map(|&i| all[i].clone()).collect();
    let train_cfg =
        TrainConfig { learning_rate: 3e-3, epochs: 30, ..TrainConfig::default() };
    let history = fit(&mut model, &train, &val, &train_cfg, 0).unwrap();
    let final_acc = history.last().unwrap().val.accuracy;
    assert!(final_acc >= 0.90, "fold-0 validation accuracy {final_acc}");
}
