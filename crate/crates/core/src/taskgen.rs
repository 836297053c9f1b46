//! Task and benchmark generation: vote-based label assignment with
//! quantifier noise, 1000-row tasks, splits, and seen/novel pools.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entail::argmax_first;
use crate::explang::{render_explanation, Explanation};
use crate::rules::{enumerate_task_types, EvalError, LabelArity, Rule, RuleError, TaskType};
use crate::schema::{builtin_schemas, sample_example, Example, SchemaError, SchemaSpec};
use crate::seed::{stable_hash, task_rng};

pub const EXAMPLES_PER_TASK: usize = 1000;
pub const FEATURES_PER_TASK: usize = 5;
pub const TRAIN_SIZE: usize = 700;
pub const VAL_SIZE: usize = 100;
pub const TEST_SIZE: usize = 200;

const PROBE_ROWS: usize = 200;
const MAX_MAJORITY: f64 = 0.9;
const MAX_RULESET_ATTEMPTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("rule label `{0}` is not a task label")]
    UnknownLabel(String),
    #[error("label assignment needs at least one rule")]
    NoRules,
    #[error("schema `{schema}` too small: {reason}")]
    SchemaTooSmall { schema: String, reason: String },
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
}

/// Labels one example by rule votes.
///
/// Each quantified rule first swaps its label for a uniformly chosen other
/// label with probability `1 - p(quantifier)`. A rule whose antecedent holds
/// votes for its label; otherwise it votes for every other label. A negated
/// consequent swaps the two cases. Ties go to the lowest label index.
pub fn assign_label<'l, R: Rng + ?Sized>(
    example: &Example,
    rules: &[Rule],
    labels: &'l [String],
    rng: &mut R,
) -> Result<&'l str, GenError> {
    Ok(&labels[assign_label_index(example, rules, labels, rng)?])
}

pub fn assign_label_index<R: Rng + ?Sized>(
    example: &Example,
    rules: &[Rule],
    labels: &[String],
    rng: &mut R,
) -> Result<usize, GenError> {
    if rules.is_empty() {
        return Err(GenError::NoRules);
    }
    let mut votes = vec![0.0f64; labels.len()];
    for rule in rules {
        let mut target = labels
            .iter()
            .position(|l| *l == rule.label)
            .ok_or_else(|| GenError::UnknownLabel(rule.label.clone()))?;
        if let Some(q) = rule.quantifier {
            let u: f64 = rng.gen();
            if u < 1.0 - q.probability() && labels.len() > 1 {
                let k = rng.gen_range(0..labels.len() - 1);
                target = if k >= target { k + 1 } else { k };
            }
        }
        let holds = rule.antecedent.eval(example)?;
        if holds != rule.label_negated {
            votes[target] += 1.0;
        } else {
            for (i, v) in votes.iter_mut().enumerate() {
                if i != target {
                    *v += 1.0;
                }
            }
        }
    }
    Ok(argmax_first(&votes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabeledExample {
    pub example: Example,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train, val, or test)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Seeded shuffle of `0..n` cut into train / val / test of the given sizes.
    pub fn shuffled<R: Rng + ?Sized>(n: usize, train: usize, val: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let test = order.split_off(train + val);
        let val = order.split_off(train);
        Splits { train: order, val, test }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// True when the three index lists partition `0..n`.
    pub fn partitions(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// One classification task. `schema` holds only the task's attributes and
/// labels. Ingested real-world tasks have no rules and no task type.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub task_type: Option<TaskType>,
    pub seed: Option<u64>,
    pub schema: SchemaSpec,
    pub rules: Option<Vec<Rule>>,
    pub examples: Vec<LabeledExample>,
    pub explanations: Vec<Explanation>,
    pub splits: Splits,
}

impl Task {
    pub fn schema_name(&self) -> &str {
        &self.schema.name
    }

    pub fn labels(&self) -> &[String] {
        &self.schema.target_labels
    }

    pub fn selected_attrs(&self) -> Vec<&str> {
        self.schema.attribute_names().collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| l == label)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledExample> {
        self.splits.get(split).iter().map(|&i| &self.examples[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenOptions {
    /// Resample rule sets whose quantifier-free labels are >90% one class.
    pub degenerate_guard: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { degenerate_guard: true }
    }
}

fn majority_fraction(rules: &[Rule], schema: &SchemaSpec, attrs: &[String], labels: &[String], rng: &mut impl Rng) -> Result<f64, GenError> {
    let plain: Vec<Rule> = rules.iter().cloned().map(|r| Rule { quantifier: None, ..r }).collect();
    let mut counts = vec![0usize; labels.len()];
    for _ in 0..PROBE_ROWS {
        let ex = sample_example(schema, attrs, rng)?;
        counts[assign_label_index(&ex, &plain, labels, rng)?] += 1;
    }
    Ok(*counts.iter().max().expect("labels non-empty") as f64 / PROBE_ROWS as f64)
}

fn pick_labels(ttype: TaskType, schema: &SchemaSpec, rng: &mut impl Rng) -> Result<Vec<String>, GenError> {
    let available = schema.target_labels.len();
    let n = match ttype.label_arity {
        LabelArity::Binary => 2,
        LabelArity::Multiclass => {
            if available < 3 {
                return Err(GenError::SchemaTooSmall {
                    schema: schema.name.clone(),
                    reason: format!("multiclass needs 3+ target labels, schema has {available}"),
                });
            }
            rng.gen_range(3..=available.min(5))
        }
    };
    let mut picked = index::sample(rng, available, n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| schema.target_labels[i].clone()).collect())
}

/// Generates one task: 5 attributes, a rule set, 1000 labeled rows,
/// rendered explanations, and a 700/100/200 split.
pub fn generate_task(
    id: impl Into<String>,
    ttype: TaskType,
    schema: &SchemaSpec,
    seed: u64,
    opts: GenOptions,
) -> Result<Task, GenError> {
    if schema.attributes.len() < FEATURES_PER_TASK {
        return Err(GenError::SchemaTooSmall {
            schema: schema.name.clone(),
            reason: format!("needs {FEATURES_PER_TASK} attributes, has {}", schema.attributes.len()),
        });
    }
    let mut rng = task_rng(seed);
    let labels = pick_labels(ttype, schema, &mut rng)?;
    let mut attr_idx = index::sample(&mut rng, schema.attributes.len(), FEATURES_PER_TASK).into_vec();
    attr_idx.sort_unstable();
    let attrs: Vec<String> = attr_idx.into_iter().map(|i| schema.attributes[i].name.clone()).collect();

    let mut best: Option<(f64, Vec<Rule>)> = None;
    for _ in 0..MAX_RULESET_ATTEMPTS {
        let rules = crate::rules::sample_ruleset(ttype, schema, &attrs, &labels, &mut rng)?;
        if !opts.degenerate_guard {
            best = Some((0.0, rules));
            break;
        }
        let majority = majority_fraction(&rules, schema, &attrs, &labels, &mut rng)?;
        if best.as_ref().is_none_or(|(m, _)| majority < *m) {
            best = Some((majority, rules));
        }
        if majority <= MAX_MAJORITY {
            break;
        }
    }
    let (_, rules) = best.expect("at least one attempt");

    let mut examples = Vec::with_capacity(EXAMPLES_PER_TASK);
    for _ in 0..EXAMPLES_PER_TASK {
        let example = sample_example(schema, &attrs, &mut rng)?;
        let label = assign_label(&example, &rules, &labels, &mut rng)?.to_string();
        examples.push(LabeledExample { example, label });
    }
    let explanations = rules.iter().map(render_explanation).collect();
    let splits = Splits::shuffled(EXAMPLES_PER_TASK, TRAIN_SIZE, VAL_SIZE, &mut rng);

    Ok(Task {
        id: id.into(),
        task_type: Some(ttype),
        seed: Some(seed),
        schema: schema.slice(&attrs, &labels)?,
        rules: Some(rules),
        examples,
        explanations,
        splits,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub tasks_per_type: usize,
    pub seen_schemas: Vec<String>,
    pub novel_schemas: Vec<String>,
    #[serde(default = "default_guard")]
    pub degenerate_guard: bool,
}

fn default_guard() -> bool {
    true
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            tasks_per_type: 3,
            seen_schemas: ["bird-species", "animal-species", "rainfall"].map(String::from).to_vec(),
            novel_schemas: ["league-rank", "bond-relevance"].map(String::from).to_vec(),
            degenerate_guard: true,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.tasks_per_type < 1 {
            return Err(GenError::InvalidConfig("tasks_per_type must be at least 1".into()));
        }
        if let Some(s) = self.seen_schemas.iter().find(|s| self.novel_schemas.contains(s)) {
            return Err(GenError::InvalidConfig(format!("schema `{s}` is both seen and novel")));
        }
        if self.seen_schemas.is_empty() || self.novel_schemas.is_empty() {
            return Err(GenError::InvalidConfig("seen and novel schema lists must be non-empty".into()));
        }
        Ok(())
    }

    /// Every third replica of a type goes to the novel pool.
    pub fn replica_is_novel(replica: usize) -> bool {
        replica % 3 == 2
    }

    pub fn task_seed(&self, type_index: usize, replica: usize) -> u64 {
        stable_hash(&[self.seed, type_index as u64, replica as u64])
    }

    pub fn is_novel(&self, task: &Task) -> bool {
        self.novel_schemas.iter().any(|s| s == task.schema_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub config: BenchmarkConfig,
    pub tasks: Vec<Task>,
}

impl Benchmark {
    pub fn novel_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| self.config.is_novel(t))
    }

    pub fn seen_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| !self.config.is_novel(t))
    }
}

pub fn task_id(type_index: usize, replica: usize) -> String {
    format!("task-{type_index:02}-{replica:03}")
}

/// Generates `tasks_per_type` tasks for each of the 48 task types.
pub fn generate_benchmark(config: &BenchmarkConfig) -> Result<Benchmark, GenError> {
    config.validate()?;
    let schemas = builtin_schemas();
    let resolve = |names: &[String]| -> Result<Vec<SchemaSpec>, GenError> {
        names
            .iter()
            .map(|n| {
                schemas
                    .iter()
                    .find(|s| s.name == *n)
                    .cloned()
                    .ok_or_else(|| GenError::InvalidConfig(format!("unknown schema `{n}`")))
            })
            .collect()
    };
    let seen = resolve(&config.seen_schemas)?;
    let novel = resolve(&config.novel_schemas)?;
    let opts = GenOptions { degenerate_guard: config.degenerate_guard };

    let jobs: Vec<(usize, TaskType, usize)> = enumerate_task_types()
        .into_iter()
        .enumerate()
        .flat_map(|(i, t)| (0..config.tasks_per_type).map(move |r| (i, t, r)))
        .collect();

    let tasks = jobs
        .into_par_iter()
        .map(|(type_index, ttype, replica)| {
            let seed = config.task_seed(type_index, replica);
            let pool = if BenchmarkConfig::replica_is_novel(replica) { &novel } else { &seen };
            let eligible: Vec<&SchemaSpec> = pool
                .iter()
                .filter(|s| ttype.label_arity == LabelArity::Binary || s.target_labels.len() >= 3)
                .collect();
            let schema = eligible.choose(&mut task_rng(stable_hash(&[seed, 1]))).ok_or_else(|| {
                GenError::InvalidConfig(format!("no schema in pool supports {}", ttype.label_arity))
            })?;
            generate_task(task_id(type_index, replica), ttype, schema, seed, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Benchmark { config: config.clone(), tasks })
}
