//! Zero-shot evaluation: per-task accuracy, statistical baselines, the
//! per-axis ablation table, and the column-scrambling experiment.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::entail::{predict, EntailError, EntailmentBackend, OracleMode, PreparedSymbolic};
use crate::explang::ParseContext;
use crate::fat::{scramble, ColumnPermutation, FatError};
use crate::rules::{LabelArity, Negation, Structure, TaskType};
use crate::schema::Example;
use crate::seed::{hash_str, stable_hash};
use crate::taskgen::{Split, Task};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("task {task}: {split:?} split is empty")]
    EmptySplit { task: String, split: Split },
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("no tasks with {axis} = {value}")]
    EmptyAxisValue { axis: Axis, value: String },
    #[error("task {0} has no task type")]
    Untyped(String),
    #[error("no seeds given")]
    NoSeeds,
    #[error("task {task}: stored label `{label}` is not a task label")]
    UnknownLabel { task: String, label: String },
    #[error("task {task}: {source}")]
    Entail { task: String, source: EntailError },
    #[error("task {task}: {source}")]
    Fat { task: String, source: FatError },
    #[error("report: {0}")]
    Report(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything that labels rows of a task.
pub trait Predictor: Sync {
    fn predict(&self, task: &Task, example: &Example) -> Result<usize, HarnessError>;

    /// Labels a batch of rows from one task. Override to share per-task setup.
    fn predict_batch(&self, task: &Task, examples: &[&Example]) -> Result<Vec<usize>, HarnessError> {
        examples.iter().map(|e| self.predict(task, e)).collect()
    }
}

/// ExEnt over a symbolic oracle or an arbitrary entailment backend.
pub enum ExEntPredictor {
    Symbolic(OracleMode),
    Backend(Box<dyn EntailmentBackend>),
}

impl fmt::Debug for ExEntPredictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExEntPredictor::Symbolic(m) => f.debug_tuple("Symbolic").field(m).finish(),
            ExEntPredictor::Backend(_) => f.write_str("Backend(..)"),
        }
    }
}

impl ExEntPredictor {
    pub fn symbolic() -> Self {
        ExEntPredictor::Symbolic(OracleMode::Algorithmic)
    }

    fn run<B: EntailmentBackend + ?Sized>(task: &Task, examples: &[&Example], backend: &B) -> Result<Vec<usize>, HarnessError> {
        let ctx = ParseContext::from_schema(&task.schema);
        examples
            .iter()
            .map(|e| {
                predict(e, &task.explanations, &ctx, backend)
                    .map(|p| p.label_index)
                    .map_err(|source| HarnessError::Entail { task: task.id.clone(), source })
            })
            .collect()
    }
}

impl Predictor for ExEntPredictor {
    fn predict(&self, task: &Task, example: &Example) -> Result<usize, HarnessError> {
        Ok(self.predict_batch(task, &[example])?[0])
    }

    fn predict_batch(&self, task: &Task, examples: &[&Example]) -> Result<Vec<usize>, HarnessError> {
        match self {
            ExEntPredictor::Symbolic(mode) => {
                let ctx = ParseContext::from_schema(&task.schema);
                let backend = PreparedSymbolic::new(*mode, &task.explanations, &ctx)
                    .map_err(|source| HarnessError::Entail { task: task.id.clone(), source })?;
                Self::run(task, examples, &backend)
            }
            ExEntPredictor::Backend(backend) => Self::run(task, examples, backend.as_ref()),
        }
    }
}

/// Always answers with the same label index.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub usize);

impl Predictor for ConstantPredictor {
    fn predict(&self, _: &Task, _: &Example) -> Result<usize, HarnessError> {
        Ok(self.0)
    }
}

fn gold_indices(task: &Task, split: Split) -> Result<Vec<usize>, HarnessError> {
    let gold = task
        .split(split)
        .map(|le| {
            task.label_index(&le.label)
                .ok_or_else(|| HarnessError::UnknownLabel { task: task.id.clone(), label: le.label.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if gold.is_empty() {
        return Err(HarnessError::EmptySplit { task: task.id.clone(), split });
    }
    Ok(gold)
}

fn accuracy_on(task: &Task, rows: &[&Example], gold: &[usize], predictor: &dyn Predictor) -> Result<f64, HarnessError> {
    let predicted = predictor.predict_batch(task, rows)?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Fraction of split rows where the predictor matches the stored label.
pub fn evaluate_task(task: &Task, predictor: &dyn Predictor, split: Split) -> Result<f64, HarnessError> {
    let gold = gold_indices(task, split)?;
    let rows: Vec<&Example> = task.split(split).map(|le| &le.example).collect();
    accuracy_on(task, &rows, &gold, predictor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baselines {
    /// Expected accuracy of a uniform guesser, `1/|L|`.
    pub random: f64,
    /// Accuracy of always predicting the split's most frequent label.
    pub majority: f64,
    /// Expected accuracy of guessing by the split's label frequencies.
    pub weighted_random: f64,
}

pub fn compute_baselines(task: &Task, split: Split) -> Result<Baselines, HarnessError> {
    let gold = gold_indices(task, split)?;
    let mut counts = vec![0usize; task.labels().len()];
    for g in &gold {
        counts[*g] += 1;
    }
    let n = gold.len() as f64;
    Ok(Baselines {
        random: 1.0 / counts.len() as f64,
        majority: *counts.iter().max().expect("labels non-empty") as f64 / n,
        weighted_random: counts.iter().map(|&c| (c as f64 / n).powi(2)).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEval {
    pub task: String,
    pub task_type: Option<String>,
    pub accuracy: f64,
    pub random: f64,
    pub majority: f64,
    pub weighted_random: f64,
}

/// Evaluates every task in parallel. Rows come back sorted by task id.
pub fn evaluate_tasks<'t>(
    tasks: impl IntoParallelIterator<Item = &'t Task>,
    predictor: &dyn Predictor,
    split: Split,
) -> Result<Vec<TaskEval>, HarnessError> {
    let mut rows = tasks
        .into_par_iter()
        .map(|task| {
            let b = compute_baselines(task, split)?;
            Ok(TaskEval {
                task: task.id.clone(),
                task_type: task.task_type.map(|t| t.to_string()),
                accuracy: evaluate_task(task, predictor, split)?,
                random: b.random,
                majority: b.majority,
                weighted_random: b.weighted_random,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    if rows.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    rows.sort_by(|a, b| a.task.cmp(&b.task));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Negation,
    Structure,
    Quantifier,
    Arity,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Negation, Axis::Structure, Axis::Quantifier, Axis::Arity];

    /// Axis values in canonical order.
    pub fn values(self) -> Vec<String> {
        match self {
            Axis::Negation => Negation::ALL.iter().map(|n| n.to_string()).collect(),
            Axis::Structure => Structure::ALL.iter().map(|s| s.to_string()).collect(),
            Axis::Quantifier => vec!["unquantified".into(), "quantified".into()],
            Axis::Arity => LabelArity::ALL.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn value_of(self, t: &TaskType) -> String {
        match self {
            Axis::Negation => t.negation.to_string(),
            Axis::Structure => t.structure.to_string(),
            Axis::Quantifier => if t.quantified { "quantified" } else { "unquantified" }.into(),
            Axis::Arity => t.label_arity.to_string(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Negation => "negation",
            Axis::Structure => "structure",
            Axis::Quantifier => "quantifier",
            Axis::Arity => "arity",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "negation" => Ok(Axis::Negation),
            "structure" => Ok(Axis::Structure),
            "quantifier" | "quantified" => Ok(Axis::Quantifier),
            "arity" => Ok(Axis::Arity),
            _ => Err(format!("unknown axis `{s}` (expected negation, structure, quantifier, or arity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub value: String,
    pub tasks: usize,
    pub mean_accuracy: f64,
    pub mean_majority: f64,
    /// Mean over tasks of `(accuracy - majority) / majority`.
    pub relative_gain: f64,
}

/// Groups per-task results by each requested axis.
pub fn ablation_from_evals(tasks: &[Task], evals: &[TaskEval], axes: &[Axis]) -> Result<Vec<AblationRow>, HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let by_id: BTreeMap<&str, &TaskEval> = evals.iter().map(|e| (e.task.as_str(), e)).collect();
    let mut rows = Vec::new();
    for &axis in axes {
        for value in axis.values() {
            let (mut n, mut acc, mut maj, mut gain) = (0usize, 0.0, 0.0, 0.0);
            for task in tasks {
                let ttype = task.task_type.ok_or_else(|| HarnessError::Untyped(task.id.clone()))?;
                if axis.value_of(&ttype) != value {
                    continue;
                }
                let Some(e) = by_id.get(task.id.as_str()) else { continue };
                n += 1;
                acc += e.accuracy;
                maj += e.majority;
                gain += (e.accuracy - e.majority) / e.majority;
            }
            if n == 0 {
                return Err(HarnessError::EmptyAxisValue { axis, value });
            }
            let k = n as f64;
            rows.push(AblationRow {
                axis,
                value,
                tasks: n,
                mean_accuracy: acc / k,
                mean_majority: maj / k,
                relative_gain: gain / k,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_report(tasks: &[Task], predictor: &dyn Predictor, split: Split, axes: &[Axis]) -> Result<Vec<AblationRow>, HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let evals = evaluate_tasks(tasks, predictor, split)?;
    ablation_from_evals(tasks, &evals, axes)
}

/// Column permutation applied to a task under one experiment seed.
pub fn task_permutation(task: &Task, seed: u64) -> ColumnPermutation {
    ColumnPermutation::random(task.schema.attributes.len(), stable_hash(&[seed, hash_str(&task.id)]))
}

/// Accuracy on a split after relabeling every row's columns with `permutation`.
pub fn evaluate_scrambled(
    task: &Task,
    predictor: &dyn Predictor,
    split: Split,
    permutation: &ColumnPermutation,
) -> Result<f64, HarnessError> {
    let gold = gold_indices(task, split)?;
    let rows = task
        .split(split)
        .map(|le| scramble(&le.example, permutation))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| HarnessError::Fat { task: task.id.clone(), source })?;
    let refs: Vec<&Example> = rows.iter().collect();
    accuracy_on(task, &refs, &gold, predictor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScrambleReport {
    pub seeds: Vec<u64>,
    /// Mean task accuracy for each seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    /// Mean of `1/|L|` over the tasks.
    pub random_baseline: f64,
    pub weighted_random_baseline: f64,
}

pub fn scrambling_experiment(
    tasks: &[Task],
    predictor: &dyn Predictor,
    seeds: &[u64],
    split: Split,
) -> Result<ScrambleReport, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    if tasks.is_empty() {
        return Err(HarnessError::NoTasks);
    }
    let baselines = tasks
        .par_iter()
        .map(|t| compute_baselines(t, split))
        .collect::<Result<Vec<_>, _>>()?;
    let n = tasks.len() as f64;
    let per_seed = seeds
        .iter()
        .map(|&seed| {
            let accs = tasks
                .par_iter()
                .map(|t| evaluate_scrambled(t, predictor, split, &task_permutation(t, seed)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(accs.iter().sum::<f64>() / n)
        })
        .collect::<Result<Vec<f64>, HarnessError>>()?;
    let (mean, std) = mean_std(&per_seed);
    Ok(ScrambleReport {
        seeds: seeds.to_vec(),
        per_seed,
        mean,
        std,
        random_baseline: baselines.iter().map(|b| b.random).sum::<f64>() / n,
        weighted_random_baseline: baselines.iter().map(|b| b.weighted_random).sum::<f64>() / n,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<W: io::Write, R: Serialize>(out: W, rows: &[R]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn format_evals(rows: &[TaskEval]) -> String {
    let mut out = format!("{:<16} {:>8} {:>8} {:>8}  {}\n", "task", "accuracy", "random", "majority", "type");
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>8.3} {:>8.3} {:>8.3}  {}\n",
            r.task,
            r.accuracy,
            r.random,
            r.majority,
            r.task_type.as_deref().unwrap_or("-")
        ));
    }
    let (mean, _) = mean_std(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    out.push_str(&format!("mean accuracy {mean:.3} over {} tasks\n", rows.len()));
    out
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<11} {:<15} {:>5} {:>8} {:>8} {:>9}\n", "axis", "value", "tasks", "accuracy", "majority", "rel.gain");
    for r in rows {
        out.push_str(&format!(
            "{:<11} {:<15} {:>5} {:>8.3} {:>8.3} {:>+9.3}\n",
            r.axis.to_string(),
            r.value,
            r.tasks,
            r.mean_accuracy,
            r.mean_majority,
            r.relative_gain
        ));
    }
    out
}

impl fmt::Display for ScrambleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, a) in self.seeds.iter().zip(&self.per_seed) {
            writeln!(f, "seed {s}: accuracy {a:.4}")?;
        }
        writeln!(f, "mean {:.4} std {:.4} over {} seeds", self.mean, self.std, self.seeds.len())?;
        writeln!(f, "random baseline {:.4} (label-frequency weighted {:.4})", self.random_baseline, self.weighted_random_baseline)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::enumerate_task_types;
    use crate::schema::builtin_schema;
    use crate::taskgen::{generate_task, GenOptions, Splits};

    fn task(quantified: bool, idx: usize) -> Task {
        let ttype = enumerate_task_types().into_iter().filter(|t| t.quantified == quantified).nth(idx).unwrap();
        let schema = if ttype.label_arity == LabelArity::Binary { "league-rank" } else { "bond-relevance" };
        generate_task(format!("t{idx}"), ttype, &builtin_schema(schema).unwrap(), 7 + idx as u64, GenOptions::default()).unwrap()
    }

    struct Gold;
    impl Predictor for Gold {
        fn predict(&self, task: &Task, example: &Example) -> Result<usize, HarnessError> {
            let le = task.examples.iter().find(|le| &le.example == example).unwrap();
            Ok(task.label_index(&le.label).unwrap())
        }
    }

    #[test]
    fn oracle_is_exact_without_quantifiers() {
        for i in [0, 5, 13, 23] {
            let t = task(false, i);
            for split in [Split::Train, Split::Val, Split::Test] {
                assert_eq!(evaluate_task(&t, &ExEntPredictor::symbolic(), split).unwrap(), 1.0, "{}", t.id);
            }
        }
    }

    #[test]
    fn constant_predictor_scores_label_frequency() {
        let t = task(false, 2);
        let b = compute_baselines(&t, Split::Test).unwrap();
        let best = (0..t.labels().len())
            .map(|i| evaluate_task(&t, &ConstantPredictor(i), Split::Test).unwrap())
            .fold(0.0, f64::max);
        assert!((best - b.majority).abs() < 1e-12);
        assert!(b.majority >= b.random);
    }

    #[test]
    fn baselines_by_hand() {
        let mut t = task(false, 0);
        t.examples.truncate(3);
        for (le, l) in t.examples.iter_mut().zip([0, 0, 1]) {
            le.label = t.schema.target_labels[l].clone();
        }
        t.splits = Splits { train: vec![], val: vec![], test: vec![0, 1, 2] };
        let b = compute_baselines(&t, Split::Test).unwrap();
        assert_eq!(b.random, 0.5);
        assert!((b.majority - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.weighted_random - 5.0 / 9.0).abs() < 1e-12);
        assert!(matches!(evaluate_task(&t, &Gold, Split::Train), Err(HarnessError::EmptySplit { .. })));
        assert_eq!(evaluate_task(&t, &Gold, Split::Test).unwrap(), 1.0);
    }

    #[test]
    fn identity_scramble_matches_plain_evaluation() {
        let t = task(true, 3);
        let p = ExEntPredictor::symbolic();
        let plain = evaluate_task(&t, &p, Split::Test).unwrap();
        let id = ColumnPermutation::identity(t.schema.attributes.len());
        assert_eq!(evaluate_scrambled(&t, &p, Split::Test, &id).unwrap(), plain);
    }

    #[test]
    fn scramble_report_over_five_seeds() {
        let tasks: Vec<Task> = (0..4).map(|i| task(false, i)).collect();
        let r = scrambling_experiment(&tasks, &ExEntPredictor::symbolic(), &[42, 43, 44, 45, 46], Split::Test).unwrap();
        assert_eq!(r.per_seed.len(), 5);
        let (m, s) = mean_std(&r.per_seed);
        assert_eq!((m, s), (r.mean, r.std));
        assert!(matches!(
            scrambling_experiment(&tasks, &ExEntPredictor::symbolic(), &[], Split::Test),
            Err(HarnessError::NoSeeds)
        ));
    }

    #[test]
    fn ablation_groups_and_errors() {
        let tasks: Vec<Task> = (0..8).map(|i| task(false, i * 3)).collect();
        let rows = ablation_report(&tasks, &ExEntPredictor::symbolic(), Split::Test, &[Axis::Quantifier]);
        // no quantified tasks in the set
        assert!(matches!(rows, Err(HarnessError::EmptyAxisValue { axis: Axis::Quantifier, .. })));
        let rows = ablation_report(&tasks, &ExEntPredictor::symbolic(), Split::Test, &[Axis::Arity]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows.iter().map(|r| r.tasks).sum::<usize>(), 8);
        assert!(rows.iter().all(|r| r.mean_accuracy == 1.0 && r.relative_gain >= 0.0));
        assert!(matches!(ablation_report(&[], &ExEntPredictor::symbolic(), Split::Test, &Axis::ALL), Err(HarnessError::NoTasks)));
    }

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[0.5; 5]).1, 0.0);
    }

    #[test]
    fn csv_report_has_header() {
        let rows = vec![TaskEval {
            task: "t".into(),
            task_type: None,
            accuracy: 1.0,
            random: 0.5,
            majority: 0.75,
            weighted_random: 0.625,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "task,task_type,accuracy,random,majority,weighted_random\nt,,1.0,0.5,0.75,0.625\n");
    }
}
