//! Closed-form and finite-difference oracles for the encoder classifier.
//!
//! Parameter counts below were computed independently from the layer
//! shapes (embeddings V*d + L*d + 2d; per layer 4(d^2+d) + 2d + (d*f+f)
//! + (f*d+d) + 2d; classifier d*C + C) and are frozen as integers.

use medqa_core::encoder::{init_model, ForwardMode, ModelConfig};
use medqa_core::gradcheck::rel_err;
use medqa_core::tokenizer::Encoding;
use medqa_core::{ClassifierModel, EncoderModel, Tape};

fn config(
    num_layers: usize,
    num_heads: usize,
    d_model: usize,
    d_ff: usize,
    vocab_size: usize,
    max_len: usize,
    num_labels: usize,
) -> ModelConfig {
    ModelConfig {
        num_layers,
        num_heads,
        d_model,
        d_ff,
        vocab_size,
        max_len,
        num_labels,
        dropout: 0.0,
        variant_name: "mini-roberta-base".into(),
    }
}

fn enc(ids: Vec<usize>, real: usize) -> Encoding {
    let mut mask = vec![1u8; real];
    mask.resize(ids.len(), 0);
    Encoding { ids, mask }
}

#[test]
fn parameter_counts_match_closed_form() {
    let cases = [
        (config(2, 2, 8, 16, 12, 6, 3), 1387usize),
        (config(2, 4, 64, 128, 100, 16, 10), 75146),
        (config(4, 8, 128, 256, 100, 16, 10), 546314),
        (config(0, 1, 4, 8, 10, 5, 3), 83),
        (config(1, 4, 64, 128, 50, 10, 5), 37765),
    ];
    for (cfg, expected) in cases {
        let model: EncoderModel<f32> = init_model(cfg.clone(), 0).unwrap();
        assert_eq!(model.count_parameters(false), expected, "config {cfg:?}");
        // Freshly initialized models are fully trainable.
        assert_eq!(model.count_parameters(true), expected);
    }
}

#[test]
fn freezing_tensors_shrinks_the_trainable_count() {
    let model_cfg = config(1, 2, 8, 16, 12, 6, 3);
    let mut model: EncoderModel<f32> = init_model(model_cfg, 0).unwrap();
    let total = model.count_parameters(false);
    let embed = model.tok_embed.numel();
    model.tok_embed.set_requires_grad(false);
    assert_eq!(model.count_parameters(true), total - embed);
    assert_eq!(model.count_parameters(false), total);
    let names: Vec<String> = model.trainable_params().into_iter().map(|(n, _)| n).collect();
    assert!(!names.iter().any(|n| n == "tok_embed"));
}

/// Loss of one labeled batch on a fresh tape.
fn batch_loss(model: &EncoderModel<f64>, batch: &[Encoding], targets: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let bound = model.bind_forward(&mut tape, batch, ForwardMode::Eval).unwrap();
    let loss = tape.cross_entropy(bound.logits, targets).unwrap();
    tape.scalar_value(loss).unwrap()
}

/// Central-difference check of every parameter coordinate of a small but
/// complete model (attention, FFN, norms, embeddings, classifier) against
/// the taped backward pass.
#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = config(1, 2, 4, 8, 10, 4, 3);
    let mut model: EncoderModel<f64> = init_model(cfg, 42).unwrap();
    let batch = vec![enc(vec![1, 4, 2, 0], 3), enc(vec![1, 5, 6, 2], 4)];
    let targets = vec![0usize, 2];

    let mut tape = Tape::new();
    let bound = model.bind_forward(&mut tape, &batch, ForwardMode::Eval).unwrap();
    let loss = tape.cross_entropy(bound.logits, &targets).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = bound
        .trainable
        .iter()
        .map(|(name, r)| (name.clone(), tape.grad(*r).unwrap().to_vec()))
        .collect();

    let h = 1e-5;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for (k, (name, grad)) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = {
                let mut params = model.trainable_params_mut();
                let slot = &mut params[k].1.data_mut()[j];
                let orig = *slot;
                *slot = orig + h;
                orig
            };
            let up = batch_loss(&model, &batch, &targets);
            model.trainable_params_mut()[k].1.data_mut()[j] = orig - h;
            let down = batch_loss(&model, &batch, &targets);
            model.trainable_params_mut()[k].1.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            // The absolute floor of 1e-6 keeps finite-difference noise
            // (~1e-11 at this loss scale) from dominating coordinates
            // whose true gradient is itself below 1e-8.
            let err = rel_err(grad[j], numeric, 1e-6);
            assert!(
                err < 1e-3,
                "{name}[{j}]: analytic {} vs numeric {} (rel err {err:.3e})",
                grad[j],
                numeric
            );
            worst = worst.max(err);
            checked += 1;
        }
    }
    // Every trainable coordinate must have been swept.
    assert_eq!(checked, model.count_parameters(true));
    assert!(worst < 1e-3);
}

#[test]
fn real_tokens_do_influence_logits() {
    // Complement of the padding-invariance guarantee: editing a real,
    // non-[CLS] token must move the logits.
    let cfg = config(2, 2, 8, 16, 12, 6, 3);
    let model: EncoderModel<f64> = init_model(cfg, 42).unwrap();
    let a = enc(vec![1, 4, 5, 2, 0, 0], 4);
    let b = enc(vec![1, 9, 5, 2, 0, 0], 4);
    let la = model.forward_logits(&[a]).unwrap();
    let lb = model.forward_logits(&[b]).unwrap();
    let moved = la.data().iter().zip(lb.data()).any(|(x, y)| (x - y).abs() > 1e-9);
    assert!(moved);
}
