//! Dataset loading, label indexing, splits, folds, and the synthetic
//! template generator.
//!
//! The canonical interchange format is two CSV tables: questions
//! ("Disease,Question,Label") and predefined answers
//! ("Disease,Label,Answer"), UTF-8 with RFC-4180 quoting.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const PRIMARY_HEADER: [&str; 3] = ["Disease", "Question", "Label"];
pub const SECONDARY_HEADER: [&str; 3] = ["Disease", "Label", "Answer"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: expected header {expected:?}, found {found:?}")]
    Header { path: String, expected: String, found: String },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount { path: String, line: u64, expected: usize, found: usize },
    #[error("{path}:{line}: empty {field}")]
    EmptyField { path: String, line: u64, field: &'static str },
    #[error("{path}:{line}: duplicate answer label {label:?}")]
    DuplicateLabel { path: String, line: u64, label: String },
    #[error("ratio {ratio} leaves an empty side when splitting {n} records")]
    DegenerateRatio { ratio: f64, n: usize },
    #[error("cannot split {n} records into {k} folds")]
    TooFewRecords { n: usize, k: usize },
    #[error("question pattern {pattern:?} lacks a {{disease}} placeholder")]
    PatternWithoutPlaceholder { pattern: String },
    #[error("synthetic generation needs non-empty diseases and templates")]
    EmptySyntheticInputs,
}

/// One labeled question, as in the primary table.
#[derive(Debug, Clone, PartialEq)]
pub struct QARecord {
    pub disease: String,
    pub question: String,
    pub label: String,
}

/// One predefined answer, as in the secondary table. Labels are unique
/// within a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerRecord {
    pub disease: String,
    pub label: String,
    pub answer: String,
}

fn read_rows(path: &Path, expected_header: &[&str; 3]) -> Result<Vec<(u64, [String; 3])>, DataError> {
    let pstr = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: pstr.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let mut rows = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|source| DataError::Csv { path: pstr.clone(), source })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if !saw_header {
            let found: Vec<&str> = record.iter().collect();
            if found != expected_header {
                return Err(DataError::Header {
                    path: pstr,
                    expected: expected_header.join(","),
                    found: found.join(","),
                });
            }
            saw_header = true;
            continue;
        }
        if record.len() != 3 {
            return Err(DataError::ColumnCount { path: pstr, line, expected: 3, found: record.len() });
        }
        rows.push((line, [record[0].to_string(), record[1].to_string(), record[2].to_string()]));
    }
    if !saw_header {
        return Err(DataError::Header {
            path: pstr,
            expected: expected_header.join(","),
            found: String::new(),
        });
    }
    Ok(rows)
}

/// Loads the question table. Header must be exactly
/// `Disease,Question,Label`; a header-only file yields an empty list.
pub fn load_primary(path: impl AsRef<Path>) -> Result<Vec<QARecord>, DataError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut records = Vec::new();
    for (line, [disease, question, label]) in read_rows(path, &PRIMARY_HEADER)? {
        if question.trim().is_empty() {
            return Err(DataError::EmptyField { path: pstr, line, field: "question" });
        }
        if label.trim().is_empty() {
            return Err(DataError::EmptyField { path: pstr, line, field: "label" });
        }
        records.push(QARecord { disease, question, label });
    }
    Ok(records)
}

/// Loads the answer table. Header must be exactly `Disease,Label,Answer`;
/// duplicate labels are an error naming the label and line.
pub fn load_secondary(path: impl AsRef<Path>) -> Result<Vec<AnswerRecord>, DataError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut records = Vec::new();
    for (line, [disease, label, answer]) in read_rows(path, &SECONDARY_HEADER)? {
        if label.trim().is_empty() {
            return Err(DataError::EmptyField { path: pstr, line, field: "label" });
        }
        if answer.trim().is_empty() {
            return Err(DataError::EmptyField { path: pstr, line, field: "answer" });
        }
        if seen.insert(label.clone(), line).is_some() {
            return Err(DataError::DuplicateLabel { path: pstr, line, label });
        }
        records.push(AnswerRecord { disease, label, answer });
    }
    Ok(records)
}

/// Bijection between label strings and dense ids. Labels are sorted
/// lexicographically before id assignment, so the mapping depends only on
/// the label set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndex {
    labels: Vec<String>,
    ids: HashMap<String, usize>,
}

impl LabelIndex {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: HashSet<String> = labels.into_iter().map(|l| l.as_ref().to_string()).collect();
        let mut labels: Vec<String> = set.into_iter().collect();
        labels.sort();
        let ids = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, ids }
    }

    pub fn from_records(records: &[QARecord]) -> Self {
        Self::from_labels(records.iter().map(|r| r.label.as_str()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Seeded shuffle-then-cut split: `floor(n * ratio)` records for training,
/// the rest for validation.
pub fn split_train_val(
    records: &[QARecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<QARecord>, Vec<QARecord>), DataError> {
    let n = records.len();
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::DegenerateRatio { ratio, n });
    }
    let train_n = (n as f64 * ratio).floor() as usize;
    if train_n == 0 || train_n == n {
        return Err(DataError::DegenerateRatio { ratio, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..train_n].iter().map(|&i| records[i].clone()).collect();
    let val = order[train_n..].iter().map(|&i| records[i].clone()).collect();
    Ok((train, val))
}

/// Assignment of every record index to one of `k` folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, index: usize) -> usize {
        self.assignment[index]
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// K-fold partition over label keys: within each stratum (single stratum
/// when unstratified), records are seed-shuffled and dealt round-robin,
/// with the dealing position carried across strata so small strata do not
/// pile onto fold 0.
pub(crate) fn kfold_by_keys(keys: &[usize], k: usize, seed: u64, stratified: bool) -> Result<FoldPlan, DataError> {
    let n = keys.len();
    if n < k || k == 0 {
        return Err(DataError::TooFewRecords { n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; n];

    let mut strata: Vec<(usize, Vec<usize>)> = if stratified {
        let mut by_key: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &key) in keys.iter().enumerate() {
            by_key.entry(key).or_default().push(i);
        }
        let mut strata: Vec<(usize, Vec<usize>)> = by_key.into_iter().collect();
        strata.sort_by_key(|(key, _)| *key);
        strata
    } else {
        vec![(0, (0..n).collect())]
    };

    let mut next = 0usize;
    for (_, indices) in strata.iter_mut() {
        indices.shuffle(&mut rng);
        for &i in indices.iter() {
            assignment[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignment })
}

/// Partition for k-fold cross-validation. Stratified mode balances each
/// label's records across folds within one.
pub fn kfold_split(records: &[QARecord], k: usize, seed: u64, stratified: bool) -> Result<FoldPlan, DataError> {
    let index = LabelIndex::from_records(records);
    let keys: Vec<usize> = records
        .iter()
        .map(|r| index.id(&r.label).expect("index covers every record label"))
        .collect();
    kfold_by_keys(&keys, k, seed, stratified)
}

/// Cross product of diseases and templates. Each template is a
/// `(question pattern, label suffix)` pair whose pattern contains
/// a `{disease}` placeholder; labels are `"{disease} {suffix}"`. The
/// answer bank gets one synthetic answer per distinct label. Output
/// order is seed-shuffled; content is deterministic.
pub fn generate_synthetic(
    diseases: &[String],
    templates: &[(String, String)],
    seed: u64,
) -> Result<(Vec<QARecord>, Vec<AnswerRecord>), DataError> {
    if diseases.is_empty() || templates.is_empty() {
        return Err(DataError::EmptySyntheticInputs);
    }
    for (pattern, _) in templates {
        if !pattern.contains("{disease}") {
            return Err(DataError::PatternWithoutPlaceholder { pattern: pattern.clone() });
        }
    }
    let mut records = Vec::with_capacity(diseases.len() * templates.len());
    let mut answers = Vec::new();
    let mut seen_labels = HashSet::new();
    for disease in diseases {
        for (pattern, suffix) in templates {
            let label = format!("{disease} {suffix}");
            records.push(QARecord {
                disease: disease.clone(),
                question: pattern.replace("{disease}", disease),
                label: label.clone(),
            });
            if seen_labels.insert(label.clone()) {
                answers.push(AnswerRecord {
                    disease: disease.clone(),
                    answer: format!("Reference answer describing the {suffix} of {disease}."),
                    label,
                });
            }
        }
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    answers.sort_by(|a, b| a.label.cmp(&b.label));
    Ok((records, answers))
}

/// Twenty condition names for the default synthetic corpus.
pub fn default_diseases() -> Vec<String> {
    [
        "anemia", "arthritis", "asthma", "bronchitis", "diabetes", "eczema", "gastritis",
        "glaucoma", "gout", "hepatitis", "hypertension", "influenza", "insomnia", "malaria",
        "measles", "migraine", "pneumonia", "psoriasis", "scoliosis", "tuberculosis",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Eight default question templates, two paraphrases for each of four
/// label suffixes. Paraphrase pairs are close rewordings sharing the
/// topical keyword of their suffix, as natural FAQ variants are.
pub fn default_templates() -> Vec<(String, String)> {
    [
        ("What is {disease}?", "definition"),
        ("Can you explain what {disease} is?", "definition"),
        ("What are the symptoms of {disease}?", "symptoms"),
        ("What symptoms does {disease} produce?", "symptoms"),
        ("What causes {disease}?", "causes"),
        ("What are the main causes of {disease}?", "causes"),
        ("What are the risk factors for {disease}?", "risks"),
        ("Who is at risk of developing {disease}?", "risks"),
    ]
    .into_iter()
    .map(|(q, s)| (q.to_string(), s.to_string()))
    .collect()
}
