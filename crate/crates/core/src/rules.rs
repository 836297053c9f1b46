//! Labeling rules: clauses over attributes, the `IF ... THEN [NOT] label`
//! form, quantifiers, and the 48 task types that bound rule complexity.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{AttributeSpec, Domain, Example, SchemaSpec, Value};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("attribute `{0}` missing from example")]
    MissingAttribute(String),
    #[error("attribute `{attribute}`: cannot apply {operator} to value `{value}`")]
    TypeMismatch { attribute: String, operator: Operator, value: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("need {needed} usable attributes for this structure, have {available}")]
    TooFewAttributes { needed: usize, available: usize },
    #[error("{arity} task needs {expected} labels, got {got}")]
    LabelCount { arity: LabelArity, expected: &'static str, got: usize },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("clause on `{attribute}`: {reason}")]
    InvalidClause { attribute: String, reason: String },
    #[error("rule label `{0}` is not a task label")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Operator {
    Eq,
    Neq,
    Gt,
    Gte,
    Lt,
    Lte,
    Ngt,
    Nlt,
}

impl Operator {
    pub const ALL: [Operator; 8] = [
        Operator::Eq,
        Operator::Neq,
        Operator::Gt,
        Operator::Gte,
        Operator::Lt,
        Operator::Lte,
        Operator::Ngt,
        Operator::Nlt,
    ];

    /// Surface form used in explanations.
    pub fn phrase(self) -> &'static str {
        match self {
            Operator::Eq => "equal to",
            Operator::Neq => "not equal to",
            Operator::Gt => "greater than",
            Operator::Gte => "greater than or equal to",
            Operator::Lt => "lesser than",
            Operator::Lte => "lesser than or equal to",
            Operator::Ngt => "not greater than",
            Operator::Nlt => "not lesser than",
        }
    }

    pub fn is_negated(self) -> bool {
        matches!(self, Operator::Neq | Operator::Ngt | Operator::Nlt)
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, Operator::Eq | Operator::Neq)
    }

    // NGT/NLT are literal negations, so NaN-free inputs behave like LTE/GTE
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn compare<T: PartialOrd + ?Sized>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            Operator::Eq => lhs == rhs,
            Operator::Neq => lhs != rhs,
            Operator::Gt => lhs > rhs,
            Operator::Gte => lhs >= rhs,
            Operator::Lt => lhs < rhs,
            Operator::Lte => lhs <= rhs,
            Operator::Ngt => !(lhs > rhs),
            Operator::Nlt => !(lhs < rhs),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Operator::Eq => "==",
            Operator::Neq => "!=",
            Operator::Gt => ">",
            Operator::Gte => ">=",
            Operator::Lt => "<",
            Operator::Lte => "<=",
            Operator::Ngt => "!>",
            Operator::Nlt => "!<",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub attribute: String,
    pub operator: Operator,
    pub value: Value,
}

impl Clause {
    pub fn new(attribute: impl Into<String>, operator: Operator, value: impl Into<Value>) -> Self {
        Self { attribute: attribute.into(), operator, value: value.into() }
    }

    pub fn eval(&self, example: &Example) -> Result<bool, EvalError> {
        let actual = example
            .get(&self.attribute)
            .ok_or_else(|| EvalError::MissingAttribute(self.attribute.clone()))?;
        let mismatch = || EvalError::TypeMismatch {
            attribute: self.attribute.clone(),
            operator: self.operator,
            value: actual.to_string(),
        };
        match (actual, &self.value) {
            (Value::Int(a), Value::Int(b)) => Ok(self.operator.compare(a, b)),
            (Value::Text(a), Value::Text(b)) if !self.operator.is_ordering() => Ok(self.operator.compare(a, b)),
            _ => match (actual.as_f64(), self.value.as_f64()) {
                (Some(lhs), Some(rhs)) => Ok(self.operator.compare(&lhs, &rhs)),
                _ => Err(mismatch()),
            },
        }
    }

    /// Checks operator/kind compatibility and domain membership.
    pub fn validate(&self, attr: &AttributeSpec) -> Result<(), RuleError> {
        let invalid = |reason: String| RuleError::InvalidClause { attribute: self.attribute.clone(), reason };
        if !attr.is_numeric() && self.operator.is_ordering() {
            return Err(invalid(format!("operator {} needs a numeric attribute", self.operator)));
        }
        if !attr.contains(&self.value) {
            return Err(invalid(format!("value `{}` outside the attribute domain", self.value)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ExprRepr", try_from = "ExprRepr")]
pub enum RuleExpr {
    Leaf(Clause),
    And(Box<RuleExpr>, Box<RuleExpr>),
    Or(Box<RuleExpr>, Box<RuleExpr>),
}

impl RuleExpr {
    pub fn leaf(c: Clause) -> Self {
        RuleExpr::Leaf(c)
    }

    pub fn and(a: RuleExpr, b: RuleExpr) -> Self {
        RuleExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: RuleExpr, b: RuleExpr) -> Self {
        RuleExpr::Or(Box::new(a), Box::new(b))
    }

    /// Leaf = 0; one connective = 1; a connective over a group = 2.
    pub fn depth(&self) -> usize {
        match self {
            RuleExpr::Leaf(_) => 0,
            RuleExpr::And(a, b) | RuleExpr::Or(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn clauses(&self) -> Vec<&Clause> {
        let mut out = Vec::new();
        self.collect_clauses(&mut out);
        out
    }

    fn collect_clauses<'a>(&'a self, out: &mut Vec<&'a Clause>) {
        match self {
            RuleExpr::Leaf(c) => out.push(c),
            RuleExpr::And(a, b) | RuleExpr::Or(a, b) => {
                a.collect_clauses(out);
                b.collect_clauses(out);
            }
        }
    }

    pub fn eval(&self, example: &Example) -> Result<bool, EvalError> {
        match self {
            RuleExpr::Leaf(c) => c.eval(example),
            // both sides evaluated so a malformed example always errors
            RuleExpr::And(a, b) => Ok(a.eval(example)? & b.eval(example)?),
            RuleExpr::Or(a, b) => Ok(a.eval(example)? | b.eval(example)?),
        }
    }
}

/// Truth value of a rule antecedent on one example.
pub fn eval_antecedent(expr: &RuleExpr, example: &Example) -> Result<bool, EvalError> {
    expr.eval(example)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum ExprRepr {
    Clause(Clause),
    And { children: Vec<ExprRepr> },
    Or { children: Vec<ExprRepr> },
}

impl From<RuleExpr> for ExprRepr {
    fn from(e: RuleExpr) -> Self {
        match e {
            RuleExpr::Leaf(c) => ExprRepr::Clause(c),
            RuleExpr::And(a, b) => ExprRepr::And { children: vec![(*a).into(), (*b).into()] },
            RuleExpr::Or(a, b) => ExprRepr::Or { children: vec![(*a).into(), (*b).into()] },
        }
    }
}

impl TryFrom<ExprRepr> for RuleExpr {
    type Error = String;

    fn try_from(r: ExprRepr) -> Result<Self, String> {
        let pair = |children: Vec<ExprRepr>| -> Result<(RuleExpr, RuleExpr), String> {
            let [a, b]: [ExprRepr; 2] =
                children.try_into().map_err(|c: Vec<_>| format!("connective needs 2 children, got {}", c.len()))?;
            Ok((a.try_into()?, b.try_into()?))
        };
        Ok(match r {
            ExprRepr::Clause(c) => RuleExpr::Leaf(c),
            ExprRepr::And { children } => {
                let (a, b) = pair(children)?;
                RuleExpr::and(a, b)
            }
            ExprRepr::Or { children } => {
                let (a, b) = pair(children)?;
                RuleExpr::or(a, b)
            }
        })
    }
}

/// Hedging adverb attached to a rule's consequent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    Always,
    Certainly,
    Definitely,
    Usually,
    Normally,
    Generally,
    Likely,
    Typically,
    Often,
    Sometimes,
    Frequently,
    Occasionally,
    Rarely,
    Seldom,
    Never,
}

impl Quantifier {
    pub const ALL: [Quantifier; 15] = [
        Quantifier::Always,
        Quantifier::Certainly,
        Quantifier::Definitely,
        Quantifier::Usually,
        Quantifier::Normally,
        Quantifier::Generally,
        Quantifier::Likely,
        Quantifier::Typically,
        Quantifier::Often,
        Quantifier::Sometimes,
        Quantifier::Frequently,
        Quantifier::Occasionally,
        Quantifier::Rarely,
        Quantifier::Seldom,
        Quantifier::Never,
    ];

    /// Probability that the rule's stated label assignment holds.
    pub fn probability(self) -> f64 {
        use Quantifier::*;
        match self {
            Always | Certainly | Definitely => 0.95,
            Usually | Normally | Generally | Likely | Typically => 0.70,
            Often => 0.50,
            Sometimes | Frequently => 0.30,
            Occasionally => 0.20,
            Rarely | Seldom => 0.10,
            Never => 0.05,
        }
    }

    pub fn token(self) -> &'static str {
        use Quantifier::*;
        match self {
            Always => "always",
            Certainly => "certainly",
            Definitely => "definitely",
            Usually => "usually",
            Normally => "normally",
            Generally => "generally",
            Likely => "likely",
            Typically => "typically",
            Often => "often",
            Sometimes => "sometimes",
            Frequently => "frequently",
            Occasionally => "occasionally",
            Rarely => "rarely",
            Seldom => "seldom",
            Never => "never",
        }
    }

    /// Case-insensitive token lookup.
    pub fn parse(token: &str) -> Option<Quantifier> {
        Self::ALL.into_iter().find(|q| q.token().eq_ignore_ascii_case(token))
    }

    /// Token → probability pairs.
    pub fn table() -> Vec<(&'static str, f64)> {
        Self::ALL.iter().map(|q| (q.token(), q.probability())).collect()
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub antecedent: RuleExpr,
    pub label: String,
    #[serde(rename = "negated")]
    pub label_negated: bool,
    pub quantifier: Option<Quantifier>,
}

impl Rule {
    pub fn new(antecedent: RuleExpr, label: impl Into<String>) -> Self {
        Self { antecedent, label: label.into(), label_negated: false, quantifier: None }
    }

    pub fn negated(mut self) -> Self {
        self.label_negated = true;
        self
    }

    pub fn with_quantifier(mut self, q: Quantifier) -> Self {
        self.quantifier = Some(q);
        self
    }

    pub fn validate(&self, schema: &SchemaSpec, labels: &[String]) -> Result<(), RuleError> {
        if !labels.contains(&self.label) {
            return Err(RuleError::UnknownLabel(self.label.clone()));
        }
        for c in self.antecedent.clauses() {
            let attr = schema.attribute(&c.attribute).ok_or_else(|| RuleError::UnknownAttribute(c.attribute.clone()))?;
            c.validate(attr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelArity {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Simple,
    ConjDisj,
    Nested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Negation {
    None,
    ClauseOnly,
    LabelOnly,
    ClauseOrLabel,
}

impl LabelArity {
    pub const ALL: [LabelArity; 2] = [LabelArity::Binary, LabelArity::Multiclass];
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Simple, Structure::ConjDisj, Structure::Nested];

    pub fn max_depth(self) -> usize {
        match self {
            Structure::Simple => 0,
            Structure::ConjDisj => 1,
            Structure::Nested => 2,
        }
    }

    fn clause_count(self) -> usize {
        self.max_depth() + 1
    }
}

impl Negation {
    pub const ALL: [Negation; 4] = [Negation::None, Negation::ClauseOnly, Negation::LabelOnly, Negation::ClauseOrLabel];

    pub fn allows_clause(self) -> bool {
        matches!(self, Negation::ClauseOnly | Negation::ClauseOrLabel)
    }

    pub fn allows_label(self) -> bool {
        matches!(self, Negation::LabelOnly | Negation::ClauseOrLabel)
    }
}

macro_rules! snake_display {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = serde_json::to_value(self).expect("unit enum");
                f.write_str(v.as_str().expect("string tag"))
            }
        }
    )*};
}
snake_display!(LabelArity, Structure, Negation);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskType {
    pub label_arity: LabelArity,
    pub structure: Structure,
    pub quantified: bool,
    pub negation: Negation,
}

impl TaskType {
    /// Position in the canonical enumeration.
    pub fn index(&self) -> usize {
        let a = self.label_arity as usize;
        let s = self.structure as usize;
        let q = self.quantified as usize;
        let n = self.negation as usize;
        ((a * 3 + s) * 2 + q) * 4 + n
    }

    pub fn from_index(i: usize) -> Option<TaskType> {
        enumerate_task_types().get(i).copied()
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = if self.quantified { "quantified" } else { "unquantified" };
        write!(f, "{}/{}/{}/{}", self.label_arity, self.structure, q, self.negation)
    }
}

/// All 48 task types, ordered by (arity, structure, quantified, negation).
pub fn enumerate_task_types() -> Vec<TaskType> {
    let mut out = Vec::with_capacity(48);
    for label_arity in LabelArity::ALL {
        for structure in Structure::ALL {
            for quantified in [false, true] {
                for negation in Negation::ALL {
                    out.push(TaskType { label_arity, structure, quantified, negation });
                }
            }
        }
    }
    out
}

/// A clause on this attribute can be both true and false for some domain value.
fn usable_for_clauses(attr: &AttributeSpec) -> bool {
    match &attr.domain {
        Domain::Categorical(values) => values.len() >= 2,
        Domain::Numeric { lo, hi } => hi - lo >= 2,
    }
}

// Equality on a wide integer range is almost never satisfied.
const MAX_EQ_RANGE: i64 = 10;

fn sample_clause<R: Rng + ?Sized>(attr: &AttributeSpec, negate: bool, rng: &mut R) -> Clause {
    match &attr.domain {
        Domain::Categorical(values) => {
            let op = if negate { Operator::Neq } else { Operator::Eq };
            Clause::new(attr.name.clone(), op, values[rng.gen_range(0..values.len())].clone())
        }
        Domain::Numeric { lo, hi } => {
            let small = hi - lo <= MAX_EQ_RANGE;
            let ops: &[Operator] = match (negate, small) {
                (false, false) => &[Operator::Gt, Operator::Gte, Operator::Lt, Operator::Lte],
                (false, true) => &[Operator::Gt, Operator::Gte, Operator::Lt, Operator::Lte, Operator::Eq],
                (true, false) => &[Operator::Ngt, Operator::Nlt],
                (true, true) => &[Operator::Ngt, Operator::Nlt, Operator::Neq],
            };
            let op = ops[rng.gen_range(0..ops.len())];
            // open interior: never lo or hi
            let threshold = rng.gen_range(lo + 1..*hi);
            Clause::new(attr.name.clone(), op, Value::Int(threshold))
        }
    }
}

fn sample_antecedent<R: Rng + ?Sized>(
    structure: Structure,
    attrs: &[&AttributeSpec],
    negation: Negation,
    rng: &mut R,
) -> RuleExpr {
    let chosen: Vec<&&AttributeSpec> = attrs.choose_multiple(rng, structure.clause_count()).collect();
    let mut leaves = chosen
        .into_iter()
        .map(|a| {
            let negate = negation.allows_clause() && rng.gen_bool(0.5);
            RuleExpr::Leaf(sample_clause(a, negate, rng))
        })
        .collect::<Vec<_>>()
        .into_iter();
    let mut next = || leaves.next().expect("enough leaves");
    match structure {
        Structure::Simple => next(),
        Structure::ConjDisj => {
            let (a, b) = (next(), next());
            if rng.gen_bool(0.5) {
                RuleExpr::and(a, b)
            } else {
                RuleExpr::or(a, b)
            }
        }
        Structure::Nested => {
            let (a, b, c) = (next(), next(), next());
            if rng.gen_bool(0.5) {
                RuleExpr::or(a, RuleExpr::and(b, c))
            } else {
                RuleExpr::and(a, RuleExpr::or(b, c))
            }
        }
    }
}

/// Samples a rule set for a task of type `ttype`.
///
/// Binary tasks get 1–2 rules, multiclass tasks 1 to |labels|−1; each rule
/// mentions a distinct label. Clauses within one rule use distinct attributes.
pub fn sample_ruleset<R: Rng + ?Sized>(
    ttype: TaskType,
    schema: &SchemaSpec,
    attrs: &[String],
    labels: &[String],
    rng: &mut R,
) -> Result<Vec<Rule>, RuleError> {
    match ttype.label_arity {
        LabelArity::Binary if labels.len() != 2 => {
            return Err(RuleError::LabelCount { arity: ttype.label_arity, expected: "2", got: labels.len() })
        }
        LabelArity::Multiclass if !(3..=5).contains(&labels.len()) => {
            return Err(RuleError::LabelCount { arity: ttype.label_arity, expected: "3 to 5", got: labels.len() })
        }
        _ => {}
    }
    let mut usable = Vec::with_capacity(attrs.len());
    for name in attrs {
        let attr = schema.attribute(name).ok_or_else(|| RuleError::UnknownAttribute(name.clone()))?;
        if usable_for_clauses(attr) {
            usable.push(attr);
        }
    }
    let needed = ttype.structure.clause_count();
    if usable.len() < needed {
        return Err(RuleError::TooFewAttributes { needed, available: usable.len() });
    }

    let max_rules = match ttype.label_arity {
        LabelArity::Binary => 2,
        LabelArity::Multiclass => labels.len() - 1,
    };
    let n_rules = rng.gen_range(1..=max_rules);
    let rule_labels: Vec<&String> = labels.choose_multiple(rng, n_rules).collect();

    Ok(rule_labels
        .into_iter()
        .map(|label| {
            let antecedent = sample_antecedent(ttype.structure, &usable, ttype.negation, rng);
            let label_negated = ttype.negation.allows_label() && rng.gen_bool(0.5);
            let quantifier = ttype.quantified.then(|| *Quantifier::ALL.choose(rng).expect("non-empty"));
            Rule { antecedent, label: label.clone(), label_negated, quantifier }
        })
        .collect())
}
