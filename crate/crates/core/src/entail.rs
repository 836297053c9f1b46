//! Entailment-based classification: each explanation scores the row as
//! entailed / contradicted / neutral, the scores become per-label logits,
//! and the logits are averaged over explanations.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explang::{parse_explanation, Explanation, ExplanationMeta, ParseContext, ParseError};
use crate::fat::linearize;
use crate::rules::{Clause, EvalError, Rule};
use crate::schema::{Example, Value};

/// Values within this distance of the maximum count as tied.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EntailError {
    #[error("label `{0}` is not one of the task labels")]
    UnknownLabel(String),
    #[error("need at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("cannot aggregate an empty list of logits")]
    EmptyAggregation,
    #[error("ragged logits: expected {expected} labels, got {got}")]
    RaggedLogits { expected: usize, got: usize },
    #[error("prediction needs at least one explanation")]
    NoExplanations,
    #[error("non-finite entailment scores {0:?}")]
    NonFinite(EntailmentScores),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("backend i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentScores {
    pub p_e: f64,
    pub p_c: f64,
    pub p_n: f64,
}

impl EntailmentScores {
    pub const NEUTRAL: EntailmentScores = EntailmentScores { p_e: 0.0, p_c: 0.0, p_n: 1.0 };

    pub fn new(p_e: f64, p_c: f64, p_n: f64) -> Self {
        Self { p_e, p_c, p_n }
    }

    pub fn is_finite(&self) -> bool {
        self.p_e.is_finite() && self.p_c.is_finite() && self.p_n.is_finite()
    }

    pub fn total(&self) -> f64 {
        self.p_e + self.p_c + self.p_n
    }
}

/// Per-label scores aligned with the task label list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLogits(pub Vec<f64>);

impl ClassLogits {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax_first(&self.0)
    }

    /// Softmax over the logits.
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = self.0.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect()
    }
}

/// Index of the maximum; ties (within [`TIE_EPSILON`]) go to the lowest index.
/// Shared by label assignment and prediction so both break ties identically.
pub fn argmax_first(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= max - TIE_EPSILON).unwrap_or(0)
}

/// How the symbolic oracle scores a false antecedent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// False antecedent contradicts the explanation, mirroring the voting
    /// scheme used to label synthetic tasks.
    #[default]
    Algorithmic,
    /// False antecedent says nothing: `(0, 0, 1)`.
    StrictConditional,
}

/// Deterministic stand-in for a learned entailment model.
pub fn symbolic_entail(
    rule: &Rule,
    meta: &ExplanationMeta,
    example: &Example,
    mode: OracleMode,
) -> Result<EntailmentScores, EvalError> {
    let holds = rule.antecedent.eval(example)?;
    let p = meta.quantifier.map_or(1.0, |q| q.probability());
    Ok(match (holds, mode) {
        (true, _) => EntailmentScores::new(p, 1.0 - p, 0.0),
        (false, OracleMode::Algorithmic) => EntailmentScores::new(1.0 - p, p, 0.0),
        (false, OracleMode::StrictConditional) => EntailmentScores::NEUTRAL,
    })
}

/// Maps one explanation's scores onto the label set.
///
/// Assign: `l_exp` gets `p_e`, every other label `p_c / (|L| - 1)`.
/// Not-assign: the roles of `p_e` and `p_c` swap. `p_n / |L|` goes to all.
pub fn scores_to_logits(
    scores: &EntailmentScores,
    meta: &ExplanationMeta,
    labels: &[String],
) -> Result<ClassLogits, EntailError> {
    if labels.len() < 2 {
        return Err(EntailError::TooFewLabels(labels.len()));
    }
    let target = labels
        .iter()
        .position(|l| *l == meta.l_exp)
        .ok_or_else(|| EntailError::UnknownLabel(meta.l_exp.clone()))?;
    let (to_target, to_others) = if meta.assign { (scores.p_e, scores.p_c) } else { (scores.p_c, scores.p_e) };
    let k = labels.len() as f64;
    let neutral = scores.p_n / k;
    let spread = to_others / (k - 1.0);
    Ok(ClassLogits(
        (0..labels.len())
            .map(|i| if i == target { to_target + neutral } else { spread + neutral })
            .collect(),
    ))
}

/// Elementwise mean.
pub fn aggregate_logits(per_explanation: &[ClassLogits]) -> Result<ClassLogits, EntailError> {
    let first = per_explanation.first().ok_or(EntailError::EmptyAggregation)?;
    let n = first.len();
    let mut sum = vec![0.0; n];
    for logits in per_explanation {
        if logits.len() != n {
            return Err(EntailError::RaggedLogits { expected: n, got: logits.len() });
        }
        for (s, x) in sum.iter_mut().zip(&logits.0) {
            *s += x;
        }
    }
    let m = per_explanation.len() as f64;
    Ok(ClassLogits(sum.into_iter().map(|s| s / m).collect()))
}

/// Source of entailment scores for (row, explanation) pairs.
pub trait EntailmentBackend: Send + Sync {
    fn score(
        &self,
        example: &Example,
        explanation: &Explanation,
        ctx: &ParseContext<'_>,
    ) -> Result<EntailmentScores, EntailError>;

    /// Scores all explanations against one row.
    fn score_all(
        &self,
        example: &Example,
        explanations: &[Explanation],
        ctx: &ParseContext<'_>,
    ) -> Result<Vec<EntailmentScores>, EntailError> {
        explanations.iter().map(|e| self.score(example, e, ctx)).collect()
    }
}

impl<B: EntailmentBackend + ?Sized> EntailmentBackend for Box<B> {
    fn score(&self, example: &Example, explanation: &Explanation, ctx: &ParseContext<'_>) -> Result<EntailmentScores, EntailError> {
        (**self).score(example, explanation, ctx)
    }

    fn score_all(&self, example: &Example, explanations: &[Explanation], ctx: &ParseContext<'_>) -> Result<Vec<EntailmentScores>, EntailError> {
        (**self).score_all(example, explanations, ctx)
    }
}

/// Parses each templated explanation and evaluates it on the structured row.
///
/// A clause whose looked-up value cannot belong to its attribute (wrong kind,
/// outside the domain, or missing) makes the explanation neutral; this is what
/// scrambled column names produce.
#[derive(Debug, Clone, Copy, Default)]
pub struct SymbolicBackend {
    pub mode: OracleMode,
}

impl SymbolicBackend {
    pub fn new(mode: OracleMode) -> Self {
        Self { mode }
    }

    fn coherent(clause: &Clause, example: &Example, ctx: &ParseContext<'_>) -> bool {
        match (example.get(&clause.attribute), ctx.attribute(&clause.attribute)) {
            (Some(Value::Null), _) => false,
            (Some(v), Some(attr)) => attr.contains(v),
            _ => true,
        }
    }

    pub fn score_rule(
        &self,
        rule: &Rule,
        meta: &ExplanationMeta,
        example: &Example,
        ctx: &ParseContext<'_>,
    ) -> Result<EntailmentScores, EntailError> {
        if !rule.antecedent.clauses().iter().all(|c| Self::coherent(c, example, ctx)) {
            // surface missing attributes as errors, incoherent values as neutral
            for c in rule.antecedent.clauses() {
                if example.get(&c.attribute).is_none() {
                    return Err(EvalError::MissingAttribute(c.attribute.clone()).into());
                }
            }
            return Ok(EntailmentScores::NEUTRAL);
        }
        match symbolic_entail(rule, meta, example, self.mode) {
            Ok(s) => Ok(s),
            Err(EvalError::TypeMismatch { .. }) => Ok(EntailmentScores::NEUTRAL),
            Err(e) => Err(e.into()),
        }
    }
}

impl EntailmentBackend for SymbolicBackend {
    fn score(&self, example: &Example, explanation: &Explanation, ctx: &ParseContext<'_>) -> Result<EntailmentScores, EntailError> {
        let (rule, _) = parse_explanation(&explanation.text, ctx)?;
        self.score_rule(&rule, &explanation.meta, example, ctx)
    }

    fn score_all(&self, example: &Example, explanations: &[Explanation], ctx: &ParseContext<'_>) -> Result<Vec<EntailmentScores>, EntailError> {
        explanations.iter().map(|e| self.score(example, e, ctx)).collect()
    }
}

/// Symbolic backend with explanations parsed once up front.
#[derive(Debug, Clone)]
pub struct PreparedSymbolic {
    backend: SymbolicBackend,
    rules: HashMap<String, Rule>,
}

impl PreparedSymbolic {
    pub fn new(mode: OracleMode, explanations: &[Explanation], ctx: &ParseContext<'_>) -> Result<Self, EntailError> {
        let mut rules = HashMap::with_capacity(explanations.len());
        for e in explanations {
            rules.insert(e.text.clone(), parse_explanation(&e.text, ctx)?.0);
        }
        Ok(Self { backend: SymbolicBackend::new(mode), rules })
    }
}

impl EntailmentBackend for PreparedSymbolic {
    fn score(&self, example: &Example, explanation: &Explanation, ctx: &ParseContext<'_>) -> Result<EntailmentScores, EntailError> {
        match self.rules.get(&explanation.text) {
            Some(rule) => self.backend.score_rule(rule, &explanation.meta, example, ctx),
            None => self.backend.score(example, explanation, ctx),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label_index: usize,
    pub logits: ClassLogits,
}

/// Scores every explanation, maps and averages the logits, and takes the
/// argmax with lowest-index tie-break.
pub fn predict<B: EntailmentBackend + ?Sized>(
    example: &Example,
    explanations: &[Explanation],
    ctx: &ParseContext<'_>,
    backend: &B,
) -> Result<Prediction, EntailError> {
    if explanations.is_empty() {
        return Err(EntailError::NoExplanations);
    }
    let scores = backend.score_all(example, explanations, ctx)?;
    let per_explanation = scores
        .iter()
        .zip(explanations)
        .map(|(s, e)| {
            if !s.is_finite() {
                return Err(EntailError::NonFinite(*s));
            }
            scores_to_logits(s, &e.meta, ctx.labels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let logits = aggregate_logits(&per_explanation)?;
    Ok(Prediction { label_index: logits.argmax(), logits })
}

/// One line of the backend request stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
}

/// One line of the backend response stream. Either scores or `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BackendResponse {
    pub fn scores(id: impl Into<String>, s: EntailmentScores) -> Self {
        Self { id: id.into(), p_e: Some(s.p_e), p_c: Some(s.p_c), p_n: Some(s.p_n), error: None }
    }

    pub fn into_scores(self) -> Result<EntailmentScores, EntailError> {
        if let Some(msg) = self.error {
            return Err(EntailError::Backend(format!("request {}: {msg}", self.id)));
        }
        match (self.p_e, self.p_c, self.p_n) {
            (Some(p_e), Some(p_c), Some(p_n)) => Ok(EntailmentScores { p_e, p_c, p_n }),
            _ => Err(EntailError::Backend(format!("request {}: response lacks p_e/p_c/p_n", self.id))),
        }
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    next_id: u64,
}

impl Connection {
    fn send(&mut self, req: &BackendRequest) -> Result<(), EntailError> {
        let w = self.writer.as_mut().expect("writer open");
        let mut line = serde_json::to_string(req).map_err(|e| EntailError::Backend(e.to_string()))?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        Ok(())
    }

    fn recv(&mut self) -> Result<BackendResponse, EntailError> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(EntailError::Backend("connection closed".into()));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        serde_json::from_str(line.trim()).map_err(|e| EntailError::Backend(format!("bad response `{}`: {e}", line.trim())))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // closing stdin lets a stdio server exit on its own
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

/// Line-delimited JSON client for an out-of-process entailment model.
///
/// Requests carry the FaT premise and the explanation text as hypothesis;
/// responses are matched by id. One connection serves one batch at a time.
pub struct ExternalBackend {
    conn: Mutex<Connection>,
}

impl fmt::Debug for ExternalBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalBackend").finish_non_exhaustive()
    }
}

impl ExternalBackend {
    pub fn from_streams(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            conn: Mutex::new(Connection {
                reader: Box::new(reader),
                writer: Some(Box::new(writer)),
                child: None,
                next_id: 0,
            }),
        }
    }

    pub fn connect(addr: &str) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self::from_streams(reader, stream))
    }

    /// Spawns `command` through the shell and talks to it over stdio.
    pub fn spawn(command: &str) -> io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let backend = Self::from_streams(BufReader::new(stdout), stdin);
        backend.conn.lock().expect("fresh lock").child = Some(child);
        Ok(backend)
    }

    /// Sends all pairs, then collects responses in any order by id.
    pub fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<EntailmentScores>, EntailError> {
        let mut conn = self.conn.lock().map_err(|_| EntailError::Backend("connection poisoned".into()))?;
        let mut pending: HashMap<String, usize> = HashMap::with_capacity(pairs.len());
        for (i, (premise, hypothesis)) in pairs.iter().enumerate() {
            let id = conn.next_id.to_string();
            conn.next_id += 1;
            conn.send(&BackendRequest { id: id.clone(), premise: premise.clone(), hypothesis: hypothesis.clone() })?;
            pending.insert(id, i);
        }
        if let Some(w) = conn.writer.as_mut() {
            w.flush()?;
        }
        let mut out: Vec<Option<EntailmentScores>> = vec![None; pairs.len()];
        while !pending.is_empty() {
            let resp = conn.recv()?;
            let slot = pending
                .remove(&resp.id)
                .ok_or_else(|| EntailError::Backend(format!("response for unknown id `{}`", resp.id)))?;
            out[slot] = Some(resp.into_scores()?);
        }
        Ok(out.into_iter().map(|s| s.expect("every id answered")).collect())
    }
}

impl EntailmentBackend for ExternalBackend {
    fn score(&self, example: &Example, explanation: &Explanation, ctx: &ParseContext<'_>) -> Result<EntailmentScores, EntailError> {
        Ok(self.score_all(example, std::slice::from_ref(explanation), ctx)?[0])
    }

    fn score_all(&self, example: &Example, explanations: &[Explanation], _ctx: &ParseContext<'_>) -> Result<Vec<EntailmentScores>, EntailError> {
        let premise = linearize(example).map_err(|e| EntailError::Backend(e.to_string()))?;
        let pairs: Vec<_> = explanations.iter().map(|e| (premise.clone(), e.text.clone())).collect();
        self.score_pairs(&pairs)
    }
}

/// Backend selector as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Symbolic,
    Strict,
    /// `host:port` for TCP, or `exec:<command>` to spawn a stdio server.
    External(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "symbolic" => Ok(BackendSpec::Symbolic),
            "strict" => Ok(BackendSpec::Strict),
            _ => match s.strip_prefix("external:") {
                Some(addr) if !addr.is_empty() => Ok(BackendSpec::External(addr.to_string())),
                _ => Err(format!("unknown backend `{s}` (expected symbolic, strict, or external:ADDR)")),
            },
        }
    }
}

impl BackendSpec {
    pub fn oracle_mode(&self) -> Option<OracleMode> {
        match self {
            BackendSpec::Symbolic => Some(OracleMode::Algorithmic),
            BackendSpec::Strict => Some(OracleMode::StrictConditional),
            BackendSpec::External(_) => None,
        }
    }

    pub fn open_external(&self) -> io::Result<Option<ExternalBackend>> {
        match self {
            BackendSpec::External(addr) => match addr.strip_prefix("exec:") {
                Some(cmd) => ExternalBackend::spawn(cmd).map(Some),
                None => ExternalBackend::connect(addr.trim_start_matches("tcp://")).map(Some),
            },
            _ => Ok(None),
        }
    }
}
