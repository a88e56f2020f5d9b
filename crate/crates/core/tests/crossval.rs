//! Cross-validation orchestration: exact aggregation on a stub model,
//! serial/parallel equivalence, failure diagnostics, and table rendering.

use medqa_core::crossval::{
    aggregate_summary, format_percent, metrics_csv_rows, run_cross_validation, CVSummary,
    CvError, CvOptions, SummaryMode, METRICS_CSV_HEADER,
};
use medqa_core::data::{LabelIndex, QARecord};
use medqa_core::encoder::{
    init_model, BoundForward, ClassifierModel, ForwardMode, ModelConfig,
};
use medqa_core::metrics::MetricSet;
use medqa_core::tokenizer::{build_vocab, Encoding, Vocab};
use medqa_core::train::TrainConfig;
use medqa_core::{Tape, Tensor, TensorError};

/// A model that always emits the same logit row, with one trainable
/// parameter kept out of the prediction path so the optimizer has
/// something legal to update.
struct ConstantModel {
    cfg: ModelConfig,
    p: Tensor<f32>,
    logit_row: Vec<f32>,
}

impl ConstantModel {
    fn new(num_labels: usize, logit_row: Vec<f32>) -> Self {
        assert_eq!(logit_row.len(), num_labels);
        let cfg = ModelConfig {
            num_layers: 1,
            num_heads: 1,
            d_model: 4,
            d_ff: 8,
            vocab_size: 8,
            max_len: 8,
            num_labels,
            dropout: 0.0,
            variant_name: "stub".into(),
        };
        Self { cfg, p: Tensor::zeros(vec![1, num_labels]).with_requires_grad(), logit_row }
    }
}

impl ClassifierModel<f32> for ConstantModel {
    fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn bind_forward(
        &self,
        tape: &mut Tape<f32>,
        batch: &[Encoding],
        _mode: ForwardMode<'_>,
    ) -> Result<BoundForward, TensorError> {
        let b = batch.len();
        let c = self.cfg.num_labels;
        let p_ref = tape.leaf(&self.p);
        // zeros [b,1] · p [1,C] keeps the gradient path alive while
        // contributing nothing to the logits.
        let zeros = tape.constant(vec![b, 1], vec![0.0; b])?;
        let path = tape.matmul(zeros, p_ref)?;
        let mut tiled = Vec::with_capacity(b * c);
        for _ in 0..b {
            tiled.extend_from_slice(&self.logit_row);
        }
        let bias = tape.constant(vec![b, c], tiled)?;
        let logits = tape.add(path, bias)?;
        Ok(BoundForward { logits, trainable: vec![("p".into(), p_ref)] })
    }

    fn trainable_params(&self) -> Vec<(String, &Tensor<f32>)> {
        vec![("p".into(), &self.p)]
    }

    fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        vec![("p".into(), &mut self.p)]
    }

    fn count_parameters(&self, _trainable_only: bool) -> usize {
        self.p.numel()
    }
}

/// 4 labels × 20 records each, so stratified 5-fold CV gives every fold
/// exactly 4 records per label.
fn balanced_records() -> (Vec<QARecord>, Vocab, LabelIndex) {
    let labels = ["alpha", "beta", "gamma", "delta"];
    let mut records = Vec::new();
    for (li, l) in labels.iter().enumerate() {
        for i in 0..20 {
            records.push(QARecord {
                disease: (*l).to_string(),
                question: format!("question {li} {i}"),
                label: (*l).to_string(),
            });
        }
    }
    let vocab = build_vocab(records.iter().map(|r| r.question.as_str()), 1, 64);
    let index = LabelIndex::from_records(&records);
    (records, vocab, index)
}

fn stub_cfg() -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 16, seed: 9, ..TrainConfig::default() }
}

#[test]
fn constant_prediction_on_balanced_folds_means_exactly_one_quarter() {
    let (records, vocab, labels) = balanced_records();
    // The constant row picks whichever label got id 0.
    let factory = |_seed: u64| ConstantModel::new(4, vec![1.0, 0.0, 0.0, 0.0]);
    let summary = run_cross_validation(
        "stub",
        &records,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions::default(),
    )
    .unwrap();

    assert_eq!(summary.per_fold.len(), 5);
    for fold in &summary.per_fold {
        assert_eq!(fold.accuracy, 0.25, "constant prediction on a balanced fold");
    }
    assert_eq!(summary.mean.accuracy, 0.25);
    assert_eq!(summary.histories.len(), 5);
    for h in &summary.histories {
        assert_eq!(h.len(), 2, "one entry per epoch");
    }
}

#[test]
fn mean_is_exactly_the_recomputation_from_stored_folds() {
    let (records, vocab, labels) = balanced_records();
    let factory = |_seed: u64| ConstantModel::new(4, vec![0.3, 0.1, 0.2, 0.0]);
    let summary = run_cross_validation(
        "stub",
        &records,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions::default(),
    )
    .unwrap();
    let recomputed = summary.recompute_mean();
    assert_eq!(summary.mean.accuracy, recomputed.accuracy);
    assert_eq!(summary.mean.precision, recomputed.precision);
    assert_eq!(summary.mean.recall, recomputed.recall);
    assert_eq!(summary.mean.f1, recomputed.f1);
    // Wall times: positive totals, non-decreasing inside each fold.
    assert!(summary.total_wall_time_s > 0.0);
    for h in &summary.histories {
        let mut last = 0.0;
        for e in h {
            assert!(e.wall_time_s > 0.0);
            assert!(e.wall_time_s >= last);
            last = e.wall_time_s;
        }
    }
}

#[test]
fn parallel_and_serial_runs_agree_fold_for_fold() {
    let (records, vocab, labels) = balanced_records();
    let factory = |_seed: u64| ConstantModel::new(4, vec![1.0, 0.0, 0.0, 0.0]);
    let run = |jobs: usize| {
        run_cross_validation(
            "stub",
            &records,
            &vocab,
            &labels,
            factory,
            &stub_cfg(),
            &CvOptions { jobs, ..CvOptions::default() },
        )
        .unwrap()
    };
    let serial = run(1);
    let parallel = run(3);
    assert_eq!(serial.per_fold.len(), parallel.per_fold.len());
    for (a, b) in serial.per_fold.iter().zip(&parallel.per_fold) {
        assert_eq!(a, b);
    }
    assert_eq!(serial.mean, parallel.mean);
    for (ha, hb) in serial.histories.iter().zip(&parallel.histories) {
        for (ea, eb) in ha.iter().zip(hb) {
            assert_eq!(ea.fold, eb.fold);
            assert_eq!(ea.epoch, eb.epoch);
            assert_eq!(ea.train_loss, eb.train_loss);
            assert_eq!(ea.val, eb.val);
        }
    }
}

#[test]
fn failing_fold_reports_its_id() {
    let (records, vocab, labels) = balanced_records();
    // Non-finite logits abort the very first fold.
    let factory = |_seed: u64| ConstantModel::new(4, vec![f32::INFINITY, 0.0, 0.0, 0.0]);
    let err = run_cross_validation(
        "stub",
        &records,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions::default(),
    )
    .unwrap_err();
    match &err {
        CvError::Fold { fold: 0, .. } => {}
        other => panic!("expected fold 0 failure, got {other:?}"),
    }
    assert!(err.to_string().contains("fold 0"), "diagnostic: {err}");
}

#[test]
fn best_epoch_mode_picks_the_highest_f1_of_each_history() {
    // A real (tiny) model so validation metrics actually move across
    // epochs; the mode contract is per_fold[f] = max-F1 epoch of fold f.
    let questions = [
        ("what is redwood", "tree"),
        ("tell me about redwood", "tree"),
        ("redwood overview please", "tree"),
        ("what is granite", "rock"),
        ("tell me about granite", "rock"),
        ("granite overview please", "rock"),
    ];
    let records: Vec<QARecord> = questions
        .iter()
        .map(|(q, l)| QARecord {
            disease: (*l).to_string(),
            question: (*q).to_string(),
            label: (*l).to_string(),
        })
        .collect();
    let vocab = build_vocab(records.iter().map(|r| r.question.as_str()), 1, 64);
    let labels = LabelIndex::from_records(&records);
    let cfg = ModelConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 16,
        d_ff: 32,
        vocab_size: vocab.size(),
        max_len: 8,
        num_labels: labels.len(),
        dropout: 0.0,
        variant_name: "mini-roberta-base".into(),
    };
    let train_cfg =
        TrainConfig { epochs: 4, batch_size: 2, learning_rate: 0.03, seed: 5, ..TrainConfig::default() };
    let summary = run_cross_validation(
        "toy",
        &records,
        &vocab,
        &labels,
        |seed| init_model::<f32>(cfg.clone(), seed).unwrap(),
        &train_cfg,
        &CvOptions { k: 2, mode: SummaryMode::BestEpoch, ..CvOptions::default() },
    )
    .unwrap();
    for (fold, h) in summary.histories.iter().enumerate() {
        let best = h.iter().map(|e| e.val.f1).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(summary.per_fold[fold].f1, best, "fold {fold}");
    }
}

#[test]
fn option_and_size_validation() {
    let (records, vocab, labels) = balanced_records();
    let factory = |_s: u64| ConstantModel::new(4, vec![0.0; 4]);
    let few = &records[..3];
    let err = run_cross_validation(
        "stub",
        few,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, CvError::TooFewRecords { n: 3, k: 5 }));

    let err = run_cross_validation(
        "stub",
        &records,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions { k: 1, ..CvOptions::default() },
    )
    .unwrap_err();
    assert!(matches!(err, CvError::BadOptions { .. }));

    let err = run_cross_validation(
        "stub",
        &records,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions { jobs: 0, ..CvOptions::default() },
    )
    .unwrap_err();
    assert!(matches!(err, CvError::BadOptions { .. }));
}

fn summary_with_mean(mean: MetricSet, time_s: f64, name: &str) -> CVSummary {
    CVSummary {
        variant_name: name.to_string(),
        per_fold: vec![mean],
        mean,
        total_wall_time_s: time_s,
        histories: vec![],
    }
}

#[test]
fn comparison_rows_render_two_decimal_half_up_percentages() {
    let lora_row = summary_with_mean(
        MetricSet { accuracy: 0.7847, precision: 0.7291, recall: 0.7695, f1: 0.7356 },
        12.0,
        "mini-roberta-large",
    );
    let perfect = summary_with_mean(
        MetricSet { accuracy: 1.0, precision: 1.0, recall: 1.0, f1: 1.0 },
        3.5,
        "mini-bert-large-uncased",
    );
    let rows = aggregate_summary(&[lora_row, perfect]);
    assert_eq!(rows.len(), 2);
    assert_eq!(
        (rows[0].accuracy.as_str(), rows[0].precision.as_str(), rows[0].recall.as_str(), rows[0].f1.as_str()),
        ("78.47", "72.91", "76.95", "73.56")
    );
    assert_eq!(
        (rows[1].accuracy.as_str(), rows[1].precision.as_str(), rows[1].recall.as_str(), rows[1].f1.as_str()),
        ("100.00", "100.00", "100.00", "100.00")
    );
    assert_eq!(rows[0].variant, "mini-roberta-large");
    assert_eq!(rows[0].time_s, "12.00");
}

#[test]
fn percent_formatting_rounds_half_up_at_two_decimals() {
    assert_eq!(format_percent(0.005), "0.50");
    assert_eq!(format_percent(0.0), "0.00");
    assert_eq!(format_percent(1.0), "100.00");
    // 0.703125 is exactly representable; 70.3125 % rounds half-up to 70.31.
    assert_eq!(format_percent(0.703125), "70.31");
    // 0.0937575 % case: exact binary 3/32 = 0.09375 → 9.375 % → 9.38 (half up).
    assert_eq!(format_percent(0.09375), "9.38");
}

#[test]
fn metrics_csv_rows_match_the_pinned_column_order() {
    let (records, vocab, labels) = balanced_records();
    let factory = |_seed: u64| ConstantModel::new(4, vec![1.0, 0.0, 0.0, 0.0]);
    let summary = run_cross_validation(
        "stub",
        &records,
        &vocab,
        &labels,
        factory,
        &stub_cfg(),
        &CvOptions::default(),
    )
    .unwrap();
    assert_eq!(
        METRICS_CSV_HEADER,
        "variant,fold,epoch,train_loss,accuracy,precision,recall,f1,wall_time_s"
    );
    let rows = metrics_csv_rows("stub", &summary.histories[0]);
    assert_eq!(rows.len(), 2);
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(fields.len(), 9);
    assert_eq!(fields[0], "stub");
    assert_eq!(fields[1], "0");
    assert_eq!(fields[2], "1");
    // Metric fields round-trip exactly through the shortest float form.
    let acc: f64 = fields[4].parse().unwrap();
    assert_eq!(acc, summary.histories[0][0].val.accuracy);
}
