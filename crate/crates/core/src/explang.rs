//! Template explanations: rendering rules to text and parsing them back.
//!
//! Grammar (no trailing period; one is tolerated on input):
//!
//! ```text
//! explanation := "If " expr ", then " consequent
//! expr        := term | term " and " term | term " or " term
//! term        := clause | "(" expr ")"
//! clause      := ATTRIBUTE " " PHRASE " " VALUE
//! consequent  := ["it is " QUANTIFIER " "] ["not "] LABEL
//! ```
//!
//! Attribute names may contain spaces and parentheses (`size (number)`), so
//! clauses are resolved against the schema rather than tokenized.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{Clause, Operator, Quantifier, Rule, RuleExpr};
use crate::schema::{AttributeSpec, Domain, SchemaSpec, Value};

/// Per-explanation annotation consumed by the logit mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationMeta {
    pub l_exp: String,
    /// `true` = assign `l_exp`, `false` = do not assign it.
    pub assign: bool,
    pub quantifier: Option<Quantifier>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    #[serde(flatten)]
    pub meta: ExplanationMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unexpected {found} at byte {offset}: expected {expected}")]
    Unexpected { offset: usize, found: String, expected: &'static str },
    #[error("ambiguous attribute at byte {offset}: {candidates:?}")]
    AmbiguousAttribute { offset: usize, candidates: Vec<String> },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Unexpected { offset, .. } | ParseError::AmbiguousAttribute { offset, .. } => *offset,
        }
    }
}

/// Attribute and label vocabulary an explanation is resolved against.
#[derive(Debug, Clone, Copy)]
pub struct ParseContext<'a> {
    pub attributes: &'a [AttributeSpec],
    pub labels: &'a [String],
}

impl<'a> ParseContext<'a> {
    pub fn new(attributes: &'a [AttributeSpec], labels: &'a [String]) -> Self {
        Self { attributes, labels }
    }

    pub fn from_schema(schema: &'a SchemaSpec) -> Self {
        Self::new(&schema.attributes, &schema.target_labels)
    }

    pub fn attribute(&self, name: &str) -> Option<&'a AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

struct Rendered<'a>(&'a RuleExpr);

impl fmt::Display for Rendered<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            RuleExpr::Leaf(c) => write!(f, "{} {} {}", c.attribute, c.operator.phrase(), c.value),
            RuleExpr::And(a, b) => write!(f, "{} and {}", Grouped(a), Grouped(b)),
            RuleExpr::Or(a, b) => write!(f, "{} or {}", Grouped(a), Grouped(b)),
        }
    }
}

struct Grouped<'a>(&'a RuleExpr);

impl fmt::Display for Grouped<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            RuleExpr::Leaf(_) => Rendered(self.0).fmt(f),
            _ => write!(f, "({})", Rendered(self.0)),
        }
    }
}

pub fn render_explanation(rule: &Rule) -> Explanation {
    let mut text = format!("If {}, then ", Rendered(&rule.antecedent));
    if let Some(q) = rule.quantifier {
        text.push_str("it is ");
        text.push_str(q.token());
        text.push(' ');
    }
    if rule.label_negated {
        text.push_str("not ");
    }
    text.push_str(&rule.label);
    Explanation { text, meta: meta_of(rule) }
}

/// The meta-information implied by a rule.
pub fn meta_of(rule: &Rule) -> ExplanationMeta {
    ExplanationMeta { l_exp: rule.label.clone(), assign: !rule.label_negated, quantifier: rule.quantifier }
}

pub fn parse_explanation(text: &str, ctx: &ParseContext<'_>) -> Result<(Rule, ExplanationMeta), ParseError> {
    let trimmed = text.trim_end();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
    let mut p = Parser { src: trimmed, pos: 0, ctx };
    p.expect("If ", "`If`")?;
    let antecedent = p.expr()?;
    p.expect(", then ", "`, then`")?;
    let quantifier = p.quantifier()?;
    let (label, label_negated) = p.label()?;
    let rule = Rule { antecedent, label, label_negated, quantifier };
    let meta = meta_of(&rule);
    Ok((rule, meta))
}

const PHRASES_LONGEST_FIRST: [Operator; 8] = [
    Operator::Gte,
    Operator::Lte,
    Operator::Ngt,
    Operator::Nlt,
    Operator::Neq,
    Operator::Gt,
    Operator::Lt,
    Operator::Eq,
];

const TERMINATORS: [&str; 4] = [", then ", ")", " and ", " or "];

struct Parser<'s, 'c> {
    src: &'s str,
    pos: usize,
    ctx: &'c ParseContext<'c>,
}

impl<'s> Parser<'s, '_> {
    fn rest(&self) -> &'s str {
        &self.src[self.pos..]
    }

    fn error(&self, expected: &'static str) -> ParseError {
        let rest = self.rest();
        let found = match rest.split_whitespace().next() {
            None => "end of input".to_string(),
            Some(tok) => format!("token `{tok}`"),
        };
        ParseError::Unexpected { offset: self.pos, found, expected }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str, what: &'static str) -> Result<(), ParseError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn expr(&mut self) -> Result<RuleExpr, ParseError> {
        let left = self.term()?;
        if self.eat(" and ") {
            Ok(RuleExpr::and(left, self.term()?))
        } else if self.eat(" or ") {
            Ok(RuleExpr::or(left, self.term()?))
        } else {
            Ok(left)
        }
    }

    fn term(&mut self) -> Result<RuleExpr, ParseError> {
        if self.eat("(") {
            let inner = self.expr()?;
            self.expect(")", "`)`")?;
            Ok(inner)
        } else {
            self.clause().map(RuleExpr::Leaf)
        }
    }

    fn clause(&mut self) -> Result<Clause, ParseError> {
        let rest = self.rest();
        let mut matches: Vec<(&AttributeSpec, Operator)> = Vec::new();
        for attr in self.ctx.attributes {
            let Some(after) = rest.strip_prefix(attr.name.as_str()).and_then(|r| r.strip_prefix(' ')) else {
                continue;
            };
            if let Some(op) = PHRASES_LONGEST_FIRST.into_iter().find(|op| {
                after.strip_prefix(op.phrase()).is_some_and(|r| r.starts_with(' '))
            }) {
                matches.push((attr, op));
            }
        }
        let (attr, op) = match matches.as_slice() {
            [] => return Err(self.error("an attribute name followed by a comparison")),
            [one] => *one,
            many => {
                return Err(ParseError::AmbiguousAttribute {
                    offset: self.pos,
                    candidates: many.iter().map(|(a, _)| a.name.clone()).collect(),
                })
            }
        };
        self.pos += attr.name.len() + 1 + op.phrase().len() + 1;
        let value = self.value(attr)?;
        Ok(Clause { attribute: attr.name.clone(), operator: op, value })
    }

    fn at_terminator(s: &str) -> bool {
        TERMINATORS.iter().any(|t| s.starts_with(t))
    }

    fn value(&mut self, attr: &AttributeSpec) -> Result<Value, ParseError> {
        let rest = self.rest();
        match &attr.domain {
            Domain::Categorical(values) => {
                let best = values
                    .iter()
                    .map(|v| (v.to_string(), v))
                    .filter(|(s, _)| rest.strip_prefix(s.as_str()).is_some_and(Self::at_terminator))
                    .max_by_key(|(s, _)| s.len());
                match best {
                    Some((s, v)) => {
                        self.pos += s.len();
                        Ok(v.clone())
                    }
                    None => Err(self.error("a value from the attribute domain")),
                }
            }
            Domain::Numeric { lo, hi } => {
                let len = rest
                    .char_indices()
                    .take_while(|&(i, c)| c.is_ascii_digit() || (i == 0 && c == '-'))
                    .count();
                let parsed = rest[..len].parse::<i64>().ok().filter(|v| (*lo..=*hi).contains(v));
                match parsed {
                    Some(v) if Self::at_terminator(&rest[len..]) => {
                        self.pos += len;
                        Ok(Value::Int(v))
                    }
                    _ => Err(self.error("an integer within the attribute range")),
                }
            }
        }
    }

    fn quantifier(&mut self) -> Result<Option<Quantifier>, ParseError> {
        let rest = self.rest();
        let Some(after) = rest.strip_prefix("it is ") else {
            return Ok(None);
        };
        let word = after.split(' ').next().unwrap_or("");
        match Quantifier::parse(word) {
            Some(q) if after.len() > word.len() => {
                self.pos += "it is ".len() + word.len() + 1;
                Ok(Some(q))
            }
            // a label may legitimately begin with "it is"
            _ if self.ctx.labels.iter().any(|l| l == rest || rest.strip_prefix("not ") == Some(l)) => Ok(None),
            _ => {
                self.pos += "it is ".len();
                Err(self.error("a quantifier"))
            }
        }
    }

    fn label(&mut self) -> Result<(String, bool), ParseError> {
        let rest = self.rest();
        if let Some(l) = self.ctx.labels.iter().find(|l| l.as_str() == rest) {
            return Ok((l.clone(), false));
        }
        if let Some(l) = rest.strip_prefix("not ").and_then(|r| self.ctx.labels.iter().find(|l| l.as_str() == r)) {
            return Ok((l.clone(), true));
        }
        Err(self.error("a task label"))
    }
}
