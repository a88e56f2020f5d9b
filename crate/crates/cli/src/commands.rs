//! The four subcommands. Each returns `Ok(())` for exit code 0 or a
//! `CliError` that the caller maps to code 1 (runtime) or 2 (usage).

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use medqa_core::checkpoint::{load_checkpoint, save_checkpoint, AnyModel};
use medqa_core::crossval::{
    aggregate_summary, metrics_csv_rows, run_cross_validation, CVSummary, METRICS_CSV_HEADER,
};
use medqa_core::data::{load_primary, load_secondary, split_train_val, LabelIndex, QARecord};
use medqa_core::encoder::{init_model, ModelConfig};
use medqa_core::lora::{wrap_with_lora, LoraConfig};
use medqa_core::qa::{answer_question, AnswerBank};
use medqa_core::tokenizer::{build_vocab, tokenize, Vocab};
use medqa_core::train::{encode_records, fit, EpochMetrics};

use crate::args::{AskArgs, CrossvalArgs, ReportArgs, ReportFormat, TrainArgs};
use crate::config::ResolvedConfig;
use crate::error::{runtime, usage, CliError};
use crate::report;

/// Vocabulary cap; synthetic-scale corpora stay far below it.
const VOCAB_CAP: usize = 30_000;

/// Longest question in tokens, plus the [CLS]/[SEP] wrapper. Encoder
/// configs require at least 3 positions.
fn derived_max_len(records: &[QARecord]) -> usize {
    records.iter().map(|r| tokenize(&r.question).len() + 2).max().unwrap_or(3).max(3)
}

/// Builds the classifier for a resolved config: the preset dimensions,
/// optionally wrapped with zero-initialized low-rank adapters.
fn build_model(
    resolved: &ResolvedConfig,
    vocab_size: usize,
    max_len: usize,
    num_labels: usize,
    seed: u64,
) -> Result<AnyModel<f32>, CliError> {
    let mut config =
        ModelConfig::for_variant(resolved.variant(), vocab_size, max_len, num_labels);
    config.dropout = resolved.dropout;
    let base = init_model::<f32>(config, seed)?;
    if resolved.lora {
        Ok(AnyModel::Lora(wrap_with_lora(base, LoraConfig::default(), seed)?))
    } else {
        Ok(AnyModel::Plain(base))
    }
}

/// Creates the run directory and refuses to clobber a previous run's
/// artifacts unless --force is given.
fn prepare_out_dir(out: &Path, force: bool, artifacts: &[&str]) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    if !force {
        for name in artifacts {
            let path = out.join(name);
            if path.exists() {
                return Err(usage(format!(
                    "{} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn metrics_csv_text(variant_label: &str, histories: &[Vec<EpochMetrics>]) -> String {
    let mut text = String::from(METRICS_CSV_HEADER);
    text.push('\n');
    for history in histories {
        for row in metrics_csv_rows(variant_label, history) {
            text.push_str(&row);
            text.push('\n');
        }
    }
    text
}

/// Loads the primary CSV and builds the shared artifacts every training
/// command needs. The vocabulary and label index come from the full
/// dataset so that validation folds never hit unknown labels.
struct Prepared {
    records: Vec<QARecord>,
    vocab: Vocab,
    labels: LabelIndex,
    max_len: usize,
}

fn prepare_data(data: &Path, resolved: &mut ResolvedConfig) -> Result<Prepared, CliError> {
    let records = load_primary(data)?;
    if records.is_empty() {
        return Err(runtime(format!("{} contains no records", data.display())));
    }
    let vocab = build_vocab(records.iter().map(|r| r.question.as_str()), 1, VOCAB_CAP);
    let labels = LabelIndex::from_records(&records);
    if labels.len() < 2 {
        return Err(runtime(format!(
            "{} needs at least 2 distinct labels, found {}",
            data.display(),
            labels.len()
        )));
    }
    let max_len = resolved.max_len.unwrap_or_else(|| derived_max_len(&records));
    resolved.max_len = Some(max_len);
    Ok(Prepared { records, vocab, labels, max_len })
}

/// Warns (stderr) about labels in the dataset that the answer bank cannot
/// serve; QA on those labels would fail at lookup time.
fn warn_uncovered_labels(bank: &AnswerBank, labels: &LabelIndex) {
    let missing = bank.missing_labels(labels);
    if !missing.is_empty() {
        eprintln!(
            "warning: answer bank is missing {} label(s): {}",
            missing.len(),
            missing.join(", ")
        );
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut resolved =
        ResolvedConfig::resolve(&args.hyper, args.train_ratio, None, None, false, false)?;
    let prepared = prepare_data(&args.data, &mut resolved)?;

    if let Some(answers_path) = &args.answers {
        let bank = AnswerBank::from_records(&load_secondary(answers_path)?)?;
        warn_uncovered_labels(&bank, &prepared.labels);
    }

    let (train_records, val_records) =
        split_train_val(&prepared.records, resolved.train_ratio, resolved.seed)?;
    let train_set =
        encode_records(&train_records, &prepared.vocab, &prepared.labels, prepared.max_len)?;
    let val_set =
        encode_records(&val_records, &prepared.vocab, &prepared.labels, prepared.max_len)?;

    let mut model = build_model(
        &resolved,
        prepared.vocab.size(),
        prepared.max_len,
        prepared.labels.len(),
        resolved.seed,
    )?;
    let train_config = resolved.train_config();
    let history = fit(&mut model, &train_set, &val_set, &train_config, 0)?;

    prepare_out_dir(&args.out, args.force, &["config.json", "metrics.csv", "model.mqf"])?;
    write_file(&args.out.join("config.json"), &resolved.to_json())?;
    write_file(
        &args.out.join("metrics.csv"),
        &metrics_csv_text(&resolved.variant_label(), std::slice::from_ref(&history)),
    )?;
    save_checkpoint(&model, &prepared.vocab, &prepared.labels, &args.out.join("model.mqf"))?;

    let last = history.last().expect("fit yields one row per epoch");
    println!(
        "trained {} for {} epochs on {} train / {} val records",
        resolved.variant_label(),
        resolved.epochs,
        train_records.len(),
        val_records.len()
    );
    println!(
        "final val: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
        last.val.accuracy, last.val.precision, last.val.recall, last.val.f1
    );
    println!("run dir: {}", args.out.display());
    Ok(())
}

pub fn cmd_crossval(args: &CrossvalArgs) -> Result<(), CliError> {
    let mut resolved = ResolvedConfig::resolve(
        &args.hyper,
        None,
        args.k,
        args.jobs,
        args.no_stratify,
        args.best_epoch,
    )?;
    let prepared = prepare_data(&args.data, &mut resolved)?;

    // Surface bad model dimensions as a usage error up front; afterwards
    // the per-fold factory cannot fail.
    let resolved_ref = &resolved;
    build_model(
        resolved_ref,
        prepared.vocab.size(),
        prepared.max_len,
        prepared.labels.len(),
        resolved.seed,
    )?;
    let factory = |fold_seed: u64| -> AnyModel<f32> {
        build_model(
            resolved_ref,
            prepared.vocab.size(),
            prepared.max_len,
            prepared.labels.len(),
            fold_seed,
        )
        .expect("model config validated before the run")
    };

    let train_config = resolved.train_config();
    let summary = run_cross_validation(
        &resolved.variant_label(),
        &prepared.records,
        &prepared.vocab,
        &prepared.labels,
        factory,
        &train_config,
        &resolved.cv_options(),
    )?;

    prepare_out_dir(&args.out, args.force, &["config.json", "metrics.csv", "summary.json"])?;
    write_file(&args.out.join("config.json"), &resolved.to_json())?;
    write_file(
        &args.out.join("metrics.csv"),
        &metrics_csv_text(&resolved.variant_label(), &summary.histories),
    )?;
    let mut summary_json =
        serde_json::to_string_pretty(&summary).map_err(|e| runtime(e.to_string()))?;
    summary_json.push('\n');
    write_file(&args.out.join("summary.json"), &summary_json)?;

    print!("{}", report::format_summary_table(&aggregate_summary(std::slice::from_ref(&summary))));
    for (fold, metrics) in summary.per_fold.iter().enumerate() {
        println!(
            "fold {fold}: accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            metrics.accuracy, metrics.precision, metrics.recall, metrics.f1
        );
    }
    println!("total wall time: {:.2}s", summary.total_wall_time_s);
    println!("run dir: {}", args.out.display());
    Ok(())
}

pub fn cmd_ask(args: &AskArgs) -> Result<(), CliError> {
    // Everything loads before the loop; failures here exit nonzero without
    // reading stdin.
    let loaded = load_checkpoint::<f32>(&args.model)?;
    let bank = AnswerBank::from_records(&load_secondary(&args.answers)?)?;
    warn_uncovered_labels(&bank, &loaded.labels);

    let stdin = io::stdin();
    let stdout = io::stdout();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| runtime(format!("cannot read stdin: {e}")))?;
        let question = line.trim();
        if question.is_empty() {
            eprintln!("error: empty question; type a question or press Ctrl-D to exit");
            continue;
        }
        match answer_question(
            &loaded.model,
            &loaded.vocab,
            &loaded.labels,
            &bank,
            question,
            args.threshold,
        ) {
            Ok(response) => {
                let mut out = stdout.lock();
                writeln!(
                    out,
                    "label: {}  confidence: {:.4}",
                    response.label, response.confidence
                )
                .and_then(|_| writeln!(out, "answer: {}", response.answer_text()))
                .map_err(|e| runtime(format!("cannot write stdout: {e}")))?;
            }
            Err(err) => eprintln!("error: {err}"),
        }
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let csv_path = args.run.join("metrics.csv");
    let text = fs::read_to_string(&csv_path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", csv_path.display())))?;
    let rows = report::parse_metrics_csv(&text)?;

    let report_dir = args.run.join("report");
    fs::create_dir_all(&report_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", report_dir.display())))?;

    let mut written: Vec<PathBuf> = Vec::new();
    for (idx, name) in report::METRIC_NAMES.iter().enumerate() {
        let (contents, extension) = match args.format {
            ReportFormat::Svg => (report::render_svg(idx, &rows), "svg"),
            ReportFormat::Csv => (report::render_pivot_csv(idx, &rows), "csv"),
        };
        let path = report_dir.join(format!("{name}.{extension}"));
        write_file(&path, &contents)?;
        written.push(path);
    }

    let summaries = report::summaries_from_rows(&rows);
    print!("{}", report::format_summary_table(&aggregate_summary(&summaries)));
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

/// Shared by train/crossval tests: the summary table helper re-exported
/// for fixture-driven rendering checks.
pub fn summary_table(summaries: &[CVSummary]) -> String {
    report::format_summary_table(&aggregate_summary(summaries))
}
