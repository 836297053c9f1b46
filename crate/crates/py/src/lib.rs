//! Python bindings: task generation, explanation rendering and parsing,
//! FaT linearization, the ExEnt logit mapping, and evaluation.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use clues_core::datio;
use clues_core::entail::{self, BackendSpec, EntailmentScores};
use clues_core::explang::{self, ExplanationMeta, ParseContext};
use clues_core::fat;
use clues_core::harness::{self, ExEntPredictor};
use clues_core::rules::{Rule, TaskType};
use clues_core::schema::{self, Example, Value};
use clues_core::taskgen::{self, BenchmarkConfig, GenOptions, Split};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(split: &str) -> PyResult<Split> {
    split.parse().map_err(value_err)
}

fn predictor(backend: &str) -> PyResult<ExEntPredictor> {
    let spec: BackendSpec = backend.parse().map_err(value_err)?;
    match spec.oracle_mode() {
        Some(mode) => Ok(ExEntPredictor::Symbolic(mode)),
        None => {
            let ext = spec.open_external().map_err(value_err)?.expect("external spec");
            Ok(ExEntPredictor::Backend(Box::new(ext)))
        }
    }
}

/// A generated or loaded classification task.
#[pyclass(name = "Task", module = "clues", frozen, from_py_object)]
#[derive(Clone)]
struct PyTask {
    inner: taskgen::Task,
}

#[pymethods]
impl PyTask {
    /// Reads a task directory written by `export` or the `clues generate` CLI.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: datio::import_task(&path).map_err(value_err)? })
    }

    /// Builds a task from a CSV file, an explanations JSONL file and a schema document.
    #[staticmethod]
    fn from_csv(csv: PathBuf, explanations: PathBuf, schema_doc: &str) -> PyResult<Self> {
        Ok(Self { inner: datio::load_real_task(&csv, &explanations, schema_doc).map_err(value_err)? })
    }

    fn export(&self, path: PathBuf) -> PyResult<()> {
        datio::export_task(&self.inner, &path).map_err(value_err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn task_type(&self) -> Option<String> {
        self.inner.task_type.map(|t| t.to_string())
    }

    #[getter]
    fn schema_name(&self) -> &str {
        self.inner.schema_name()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn attributes(&self) -> Vec<String> {
        self.inner.selected_attrs().into_iter().map(String::from).collect()
    }

    #[getter]
    fn explanations(&self) -> Vec<String> {
        self.inner.explanations.iter().map(|e| e.text.clone()).collect()
    }

    /// Rules as canonical JSON, or None for ingested real-world tasks.
    fn rules_json(&self) -> Option<String> {
        self.inner.rules.as_ref().map(|r| serde_json::to_string(r).expect("rules serialize"))
    }

    fn schema_document(&self) -> String {
        self.inner.schema.to_document()
    }

    fn __len__(&self) -> usize {
        self.inner.examples.len()
    }

    /// `(premise, label)` pairs, premises in FaT form.
    #[pyo3(signature = (split=None))]
    fn rows(&self, split: Option<&str>) -> PyResult<Vec<(String, String)>> {
        let examples: Vec<_> = match split {
            Some(s) => self.inner.split(parse_split(s)?).collect(),
            None => self.inner.examples.iter().collect(),
        };
        examples
            .into_iter()
            .map(|le| Ok((fat::linearize(&le.example).map_err(value_err)?, le.label.clone())))
            .collect()
    }

    /// Accuracy of ExEnt with the given backend on one split.
    #[pyo3(signature = (backend="symbolic", split="test"))]
    fn evaluate(&self, py: Python<'_>, backend: &str, split: &str) -> PyResult<f64> {
        let split = parse_split(split)?;
        let p = predictor(backend)?;
        let task = &self.inner;
        py.detach(|| harness::evaluate_task(task, &p, split)).map_err(value_err)
    }

    /// Uniform-guess, majority-class and label-frequency baselines for a split.
    #[pyo3(signature = (split="test"))]
    fn baselines(&self, split: &str) -> PyResult<(f64, f64, f64)> {
        let b = harness::compute_baselines(&self.inner, parse_split(split)?).map_err(value_err)?;
        Ok((b.random, b.majority, b.weighted_random))
    }

    fn __repr__(&self) -> String {
        format!(
            "Task(id={:?}, schema={:?}, type={}, labels={:?}, examples={})",
            self.inner.id,
            self.inner.schema_name(),
            self.task_type().unwrap_or_else(|| "real".into()),
            self.inner.labels(),
            self.inner.examples.len()
        )
    }
}

/// Names of the builtin table schemas.
#[pyfunction]
fn schemas() -> Vec<String> {
    schema::builtin_schemas().into_iter().map(|s| s.name).collect()
}

#[pyfunction]
fn schema_document(name: &str) -> PyResult<String> {
    schema::builtin_schema(name)
        .map(|s| s.to_document())
        .ok_or_else(|| value_err(format!("unknown schema `{name}`")))
}

/// The 48 task types in canonical order.
#[pyfunction]
fn task_types() -> Vec<String> {
    clues_core::rules::enumerate_task_types().iter().map(|t| t.to_string()).collect()
}

#[pyfunction]
#[pyo3(signature = (type_index, schema, seed, guard=true))]
fn generate_task(type_index: usize, schema: &str, seed: u64, guard: bool) -> PyResult<PyTask> {
    let ttype = TaskType::from_index(type_index).ok_or_else(|| value_err(format!("task type index {type_index} out of range")))?;
    let spec = schema::builtin_schema(schema).ok_or_else(|| value_err(format!("unknown schema `{schema}`")))?;
    let id = taskgen::task_id(type_index, 0);
    let task = taskgen::generate_task(id, ttype, &spec, seed, GenOptions { degenerate_guard: guard }).map_err(value_err)?;
    Ok(PyTask { inner: task })
}

/// Generates the benchmark; returns `(seen, novel)` task lists.
#[pyfunction]
#[pyo3(signature = (seed=42, tasks_per_type=3))]
fn generate_benchmark(py: Python<'_>, seed: u64, tasks_per_type: usize) -> PyResult<(Vec<PyTask>, Vec<PyTask>)> {
    let config = BenchmarkConfig { seed, tasks_per_type, ..Default::default() };
    let bench = py.detach(|| taskgen::generate_benchmark(&config)).map_err(value_err)?;
    let wrap = |t: &taskgen::Task| PyTask { inner: t.clone() };
    Ok((bench.seen_tasks().map(wrap).collect(), bench.novel_tasks().map(wrap).collect()))
}

/// Renders one rule (canonical JSON) as an explanation sentence.
#[pyfunction]
fn render_explanation(rule_json: &str) -> PyResult<String> {
    let rule: Rule = serde_json::from_str(rule_json).map_err(value_err)?;
    Ok(explang::render_explanation(&rule).text)
}

/// Parses an explanation against a schema document; returns `(rule_json, meta_json)`.
#[pyfunction]
fn parse_explanation(text: &str, schema_doc: &str) -> PyResult<(String, String)> {
    let spec = schema::load_schema(schema_doc).map_err(value_err)?;
    let (rule, meta) = explang::parse_explanation(text, &ParseContext::from_schema(&spec)).map_err(value_err)?;
    Ok((serde_json::to_string(&rule).expect("rule"), serde_json::to_string(&meta).expect("meta")))
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_none() {
        Ok(Value::Null)
    } else if let Ok(i) = obj.extract::<i64>() {
        Ok(Value::Int(i))
    } else if let Ok(f) = obj.extract::<f64>() {
        Ok(Value::Float(f))
    } else {
        Ok(Value::Text(obj.extract::<String>()?))
    }
}

/// FaT string for `[(name, value), ...]`.
#[pyfunction]
fn linearize(fields: Vec<(String, Bound<'_, PyAny>)>) -> PyResult<String> {
    let fields = fields.into_iter().map(|(n, v)| Ok((n, to_value(&v)?))).collect::<PyResult<Vec<_>>>()?;
    fat::linearize(&Example::new(fields)).map_err(value_err)
}

/// Per-label logits for one explanation's entailment scores.
#[pyfunction]
#[pyo3(signature = (p_e, p_c, p_n, l_exp, assign, labels))]
fn scores_to_logits(p_e: f64, p_c: f64, p_n: f64, l_exp: String, assign: bool, labels: Vec<String>) -> PyResult<Vec<f64>> {
    let meta = ExplanationMeta { l_exp, assign, quantifier: None };
    let logits = entail::scores_to_logits(&EntailmentScores::new(p_e, p_c, p_n), &meta, &labels).map_err(value_err)?;
    Ok(logits.0)
}

/// Elementwise mean of per-explanation logits.
#[pyfunction]
fn aggregate_logits(logits: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let logits: Vec<_> = logits.into_iter().map(entail::ClassLogits).collect();
    Ok(entail::aggregate_logits(&logits).map_err(value_err)?.0)
}

/// Mean and population std of accuracy on column-scrambled rows over seeds,
/// plus the mean uniform random baseline.
#[pyfunction]
#[pyo3(signature = (tasks, seeds=vec![42, 43, 44, 45, 46], split="test"))]
fn scrambling_experiment(py: Python<'_>, tasks: Vec<PyTask>, seeds: Vec<u64>, split: &str) -> PyResult<(f64, f64, f64)> {
    let split = parse_split(split)?;
    let tasks: Vec<_> = tasks.into_iter().map(|t| t.inner).collect();
    let r = py
        .detach(|| harness::scrambling_experiment(&tasks, &ExEntPredictor::symbolic(), &seeds, split))
        .map_err(value_err)?;
    Ok((r.mean, r.std, r.random_baseline))
}

#[pymodule]
fn clues(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTask>()?;
    m.add_function(wrap_pyfunction!(schemas, m)?)?;
    m.add_function(wrap_pyfunction!(schema_document, m)?)?;
    m.add_function(wrap_pyfunction!(task_types, m)?)?;
    m.add_function(wrap_pyfunction!(generate_task, m)?)?;
    m.add_function(wrap_pyfunction!(generate_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(render_explanation, m)?)?;
    m.add_function(wrap_pyfunction!(parse_explanation, m)?)?;
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    m.add_function(wrap_pyfunction!(scores_to_logits, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_logits, m)?)?;
    m.add_function(wrap_pyfunction!(scrambling_experiment, m)?)?;
    Ok(())
}
