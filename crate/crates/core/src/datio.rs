//! On-disk task format, ingestion of real-world CSV tasks, and
//! mutual-information feature selection.
//!
//! A task directory holds `task.json`, `schema.json`, `rules.json` (synthetic
//! tasks only), `explanations.jsonl`, `examples.csv` and `splits.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explang::Explanation;
use crate::rules::{Rule, TaskType};
use crate::schema::{load_schema, Example, SchemaError, SchemaSpec, Value};
use crate::seed::{hash_str, task_rng};
use crate::taskgen::{Benchmark, BenchmarkConfig, LabeledExample, Splits, Task};

pub const TASK_FILE: &str = "task.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const RULES_FILE: &str = "rules.json";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const EXAMPLES_FILE: &str = "examples.csv";
pub const SPLITS_FILE: &str = "splits.json";
pub const BENCHMARK_FILE: &str = "benchmark.json";

/// Numeric columns with more distinct values than this are binned.
pub const MI_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: missing required file")]
    Missing { path: PathBuf },
    #[error("{path}: {source}")]
    Schema { path: PathBuf, source: SchemaError },
    #[error("{path}: header {found:?} does not match schema columns {expected:?}")]
    HeaderMismatch { path: PathBuf, found: Vec<String>, expected: Vec<String> },
    #[error("{path}, row {row}: label `{label}` is not one of the targets")]
    UnknownLabel { path: PathBuf, row: usize, label: String },
    #[error("{path}, line {line}: explanation mentions unknown label `{label}`")]
    UnknownExplanationLabel { path: PathBuf, line: usize, label: String },
    #[error("k = {k} exceeds the {available} available attributes")]
    TooManyFeatures { k: usize, available: usize },
    #[error("feature selection needs at least one row")]
    NoRows,
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DataError::Missing { path: path.to_path_buf() }
        } else {
            DataError::Io { path: path.to_path_buf(), source }
        }
    }
}

fn corrupt(path: &Path, message: impl ToString) -> DataError {
    DataError::Corrupt { path: path.to_path_buf(), message: message.to_string() }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), DataError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn to_json_line<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskHeader {
    id: String,
    task_type: Option<TaskType>,
    seed: Option<u64>,
}

pub fn export_task(task: &Task, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let header = TaskHeader { id: task.id.clone(), task_type: task.task_type, seed: task.seed };
    write(&dir.join(TASK_FILE), to_json_line(&header))?;
    write(&dir.join(SCHEMA_FILE), task.schema.to_document())?;
    let rules_path = dir.join(RULES_FILE);
    match &task.rules {
        Some(rules) => write(&rules_path, to_json_line(rules))?,
        None => match fs::remove_file(&rules_path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(io_err(&rules_path)(e)),
            _ => {}
        },
    }
    let mut lines = String::new();
    for e in &task.explanations {
        lines.push_str(&serde_json::to_string(e).expect("explanation serializes"));
        lines.push('\n');
    }
    write(&dir.join(EXPLANATIONS_FILE), lines)?;
    write_examples(&dir.join(EXAMPLES_FILE), &task.schema, &task.examples)?;
    let mut splits = serde_json::to_string(&task.splits).expect("splits serialize");
    splits.push('\n');
    write(&dir.join(SPLITS_FILE), splits)
}

fn write_examples(path: &Path, schema: &SchemaSpec, examples: &[LabeledExample]) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let header: Vec<&str> = schema.attribute_names().chain([schema.target_name.as_str()]).collect();
    let fail = |e: csv::Error| corrupt(path, e);
    w.write_record(&header).map_err(fail)?;
    for le in examples {
        let mut record: Vec<String> = le.example.values().map(|v| v.to_string()).collect();
        record.push(le.label.clone());
        w.write_record(&record).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| corrupt(path, e))?;
    write(path, bytes)
}

/// Reads rows whose header names the schema attributes and target, in any
/// column order. Rows come back in schema attribute order.
fn read_examples(path: &Path, schema: &SchemaSpec, exact_order: bool) -> Result<Vec<LabeledExample>, DataError> {
    let text = read(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found: Vec<String> = r.headers().map_err(|e| corrupt(path, e))?.iter().map(String::from).collect();
    let expected: Vec<String> = schema
        .attribute_names()
        .map(String::from)
        .chain([schema.target_name.clone()])
        .collect();
    let mismatch = || DataError::HeaderMismatch { path: path.to_path_buf(), found: found.clone(), expected: expected.clone() };
    let positions = expected
        .iter()
        .map(|name| found.iter().position(|f| f == name))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(mismatch)?;
    if found.len() != expected.len() || (exact_order && found != expected) {
        return Err(mismatch());
    }
    let (target_pos, attr_pos) = positions.split_last().expect("target column");
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| corrupt(path, e))?;
        let fields = schema
            .attributes
            .iter()
            .zip(attr_pos)
            .map(|(attr, &p)| {
                let cell = &record[p];
                attr.parse_cell(cell)
                    .map(|v| (attr.name.clone(), v))
                    .ok_or_else(|| corrupt(path, format!("row {row}: `{cell}` is not a value of `{}`", attr.name)))
            })
            .collect::<Result<Vec<(String, Value)>, _>>()?;
        let label = record[*target_pos].to_string();
        if !schema.target_labels.contains(&label) {
            return Err(DataError::UnknownLabel { path: path.to_path_buf(), row, label });
        }
        out.push(LabeledExample { example: Example::new(fields), label });
    }
    Ok(out)
}

fn read_explanations(path: &Path, labels: &[String]) -> Result<Vec<Explanation>, DataError> {
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Explanation = serde_json::from_str(line).map_err(|e| corrupt(path, format!("line {}: {e}", i + 1)))?;
        if !labels.contains(&e.meta.l_exp) {
            return Err(DataError::UnknownExplanationLabel { path: path.to_path_buf(), line: i + 1, label: e.meta.l_exp });
        }
        out.push(e);
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    serde_json::from_str(&read(path)?).map_err(|e| corrupt(path, e))
}

fn read_schema(path: &Path) -> Result<SchemaSpec, DataError> {
    load_schema(&read(path)?).map_err(|source| DataError::Schema { path: path.to_path_buf(), source })
}

pub fn import_task(dir: &Path) -> Result<Task, DataError> {
    let header: TaskHeader = read_json(&dir.join(TASK_FILE))?;
    let schema = read_schema(&dir.join(SCHEMA_FILE))?;
    // synthetic tasks carry a type; their rules are required
    let rules: Option<Vec<Rule>> = match header.task_type {
        Some(_) => Some(read_json(&dir.join(RULES_FILE))?),
        None => match read_json(&dir.join(RULES_FILE)) {
            Ok(r) => Some(r),
            Err(DataError::Missing { .. }) => None,
            Err(e) => return Err(e),
        },
    };
    let explanations = read_explanations(&dir.join(EXPLANATIONS_FILE), &schema.target_labels)?;
    let examples = read_examples(&dir.join(EXAMPLES_FILE), &schema, true)?;
    let splits_path = dir.join(SPLITS_FILE);
    let splits: Splits = read_json(&splits_path)?;
    if !splits.partitions(examples.len()) {
        return Err(corrupt(&splits_path, format!("splits do not partition {} examples", examples.len())));
    }
    Ok(Task {
        id: header.id,
        task_type: header.task_type,
        seed: header.seed,
        schema,
        rules,
        examples,
        explanations,
        splits,
    })
}

pub fn export_benchmark(benchmark: &Benchmark, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join(BENCHMARK_FILE), to_json_line(&benchmark.config))?;
    for task in &benchmark.tasks {
        export_task(task, &dir.join(&task.id))?;
    }
    Ok(())
}

/// Task directories under `dir`, sorted by name.
pub fn task_dirs(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.join(TASK_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Loads every task under `dir`; `dir` may also be a single task directory.
pub fn import_tasks(dir: &Path) -> Result<Vec<Task>, DataError> {
    if dir.join(TASK_FILE).is_file() {
        return Ok(vec![import_task(dir)?]);
    }
    task_dirs(dir)?.iter().map(|d| import_task(d)).collect()
}

pub fn import_benchmark(dir: &Path) -> Result<Benchmark, DataError> {
    let config: BenchmarkConfig = read_json(&dir.join(BENCHMARK_FILE))?;
    Ok(Benchmark { config, tasks: import_tasks(dir)? })
}

/// Builds a task from a real-world CSV, its annotated explanations and a
/// schema document. Splits are a seeded 70/10/20 shuffle.
pub fn load_real_task(csv_path: &Path, explanations_path: &Path, schema_doc: &str) -> Result<Task, DataError> {
    let schema = load_schema(schema_doc).map_err(|source| DataError::Schema { path: PathBuf::from("<schema>"), source })?;
    let examples = read_examples(csv_path, &schema, false)?;
    let explanations = read_explanations(explanations_path, &schema.target_labels)?;
    let id = csv_path.file_stem().map_or_else(|| "real".into(), |s| s.to_string_lossy().into_owned());
    let n = examples.len();
    let train = n * 7 / 10;
    let val = n / 10;
    let splits = Splits::shuffled(n, train, val, &mut task_rng(hash_str(&id)));
    Ok(Task { id, task_type: None, seed: None, schema, rules: None, examples, explanations, splits })
}

/// Discrete codes for one column. Numeric columns with more than
/// [`MI_BINS`] distinct values go into equal-frequency bins; everything else
/// is coded by value (nulls form their own category).
fn discretize(column: &[&Value]) -> Vec<usize> {
    let numeric: Option<Vec<f64>> = column.iter().map(|v| v.as_f64()).collect();
    if let Some(xs) = numeric {
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() > MI_BINS {
            let mut all = xs.clone();
            all.sort_by(f64::total_cmp);
            let n = all.len();
            return xs
                .iter()
                .map(|x| {
                    let rank = all.partition_point(|y| y < x);
                    (rank * MI_BINS / n).min(MI_BINS - 1)
                })
                .collect();
        }
    }
    let mut codes: BTreeMap<String, usize> = BTreeMap::new();
    for v in column {
        let next = codes.len();
        codes.entry(key(v)).or_insert(next);
    }
    column.iter().map(|v| codes[&key(v)]).collect()
}

fn key(v: &Value) -> String {
    match v {
        Value::Null => "\u{0}null".into(),
        Value::Text(s) => format!("t{s}"),
        other => format!("n{other}"),
    }
}

/// Plug-in entropy in nats.
pub fn entropy(codes: &[usize]) -> f64 {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in codes {
        *counts.entry(c).or_default() += 1;
    }
    let n = codes.len() as f64;
    -counts.values().map(|&c| c as f64 / n).map(|p| p * p.ln()).sum::<f64>()
}

/// Plug-in mutual information in nats, `sum p(a,y) ln(p(a,y) / (p(a) p(y)))`.
pub fn mutual_information(a: &[usize], y: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut pa: BTreeMap<usize, usize> = BTreeMap::new();
    let mut py: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &l) in a.iter().zip(y) {
        *joint.entry((x, l)).or_default() += 1;
        *pa.entry(x).or_default() += 1;
        *py.entry(l).or_default() += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, l), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (pa[&x] as f64 * py[&l] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

/// Per-attribute MI with the labels, in column order.
pub fn feature_scores(rows: &[Example], labels: &[String]) -> Result<Vec<(String, f64)>, DataError> {
    let first = rows.first().ok_or(DataError::NoRows)?;
    if rows.len() != labels.len() {
        return Err(DataError::LengthMismatch { rows: rows.len(), labels: labels.len() });
    }
    let label_values: Vec<Value> = labels.iter().map(|l| Value::Text(l.clone())).collect();
    let y = discretize(&label_values.iter().collect::<Vec<_>>());
    Ok(first
        .names()
        .map(|name| {
            let column: Vec<&Value> = rows.iter().map(|r| r.get(name).unwrap_or(&Value::Null)).collect();
            (name.to_string(), mutual_information(&discretize(&column), &y))
        })
        .collect())
}

/// Top-`k` attributes by mutual information with the label. Ties keep
/// column order.
pub fn select_features_mi(rows: &[Example], labels: &[String], k: usize) -> Result<Vec<String>, DataError> {
    let mut scored = feature_scores(rows, labels)?;
    if k > scored.len() {
        return Err(DataError::TooManyFeatures { k, available: scored.len() });
    }
    // stable sort keeps column order among equal scores
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored.into_iter().take(k).map(|(n, _)| n).collect())
}
