//! Table schemas: typed attribute domains, target labels, and row sampling.
//!
//! The on-disk schema document is the JSON layout used by the synthetic
//! table listings:
//!
//! ```json
//! {
//!     "description": "...",
//!     "column_names": { "humidity": ["number", [0, 100]], "location": ["categorical", ["a", "b"]] },
//!     "targets": { "rain tomorrow": ["yes", "no"] }
//! }
//! ```
//!
//! An optional top-level `"name"` key names the schema; when absent the
//! target column name is used.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("malformed schema document: {0}")]
    Malformed(String),
    #[error("attribute `{attribute}`: unknown kind tag `{kind}`")]
    UnknownKind { attribute: String, kind: String },
    #[error("attribute `{0}`: empty domain")]
    EmptyDomain(String),
    #[error("attribute `{0}`: duplicate domain value `{1}`")]
    DuplicateValue(String, String),
    #[error("attribute `{attribute}`: invalid range [{lo}, {hi}]")]
    InvalidRange { attribute: String, lo: i64, hi: i64 },
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("schema has no attributes")]
    NoAttributes,
    #[error("schema needs at least two target labels, found {0}")]
    TooFewLabels(usize),
    #[error("duplicate target label `{0}`")]
    DuplicateLabel(String),
    #[error("target name `{0}` collides with an attribute")]
    TargetCollision(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("no attributes selected")]
    EmptySelection,
}

/// A cell value. Categorical domains mix strings and numbers (e.g. `legs`
/// takes `2, 4, 6, 8`, `rainfall today` takes `0, 0.2, ...`), numeric
/// attributes hold integers. `Null` only occurs in ingested real-world rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
    Null,
}

impl Value {
    pub fn is_number(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Float(_))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn from_json(attribute: &str, v: &Json) -> Result<Self, SchemaError> {
        match v {
            Json::String(s) => Ok(Value::Text(s.clone())),
            Json::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else {
                    n.as_f64().map(Value::Float).ok_or_else(|| {
                        SchemaError::Malformed(format!("attribute `{attribute}`: bad number {n}"))
                    })
                }
            }
            other => Err(SchemaError::Malformed(format!(
                "attribute `{attribute}`: domain values must be strings or numbers, got {other}"
            ))),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Int(i) => json!(i),
            Value::Float(f) => json!(f),
            Value::Text(s) => json!(s),
            Value::Null => Json::Null,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Null, Value::Null) => true,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
            Value::Null => Ok(()),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Domain {
    Categorical(Vec<Value>),
    /// Inclusive integer interval.
    Numeric { lo: i64, hi: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpec {
    pub name: String,
    pub domain: Domain,
}

impl AttributeSpec {
    pub fn categorical(name: impl Into<String>, values: Vec<Value>) -> Self {
        Self { name: name.into(), domain: Domain::Categorical(values) }
    }

    pub fn numeric(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self { name: name.into(), domain: Domain::Numeric { lo, hi } }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.domain, Domain::Numeric { .. })
    }

    pub fn contains(&self, value: &Value) -> bool {
        match &self.domain {
            Domain::Categorical(values) => values.contains(value),
            Domain::Numeric { lo, hi } => matches!(value, Value::Int(i) if lo <= i && i <= hi),
        }
    }

    /// Draws uniformly from the domain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match &self.domain {
            Domain::Categorical(values) => values[rng.gen_range(0..values.len())].clone(),
            Domain::Numeric { lo, hi } => Value::Int(rng.gen_range(*lo..=*hi)),
        }
    }

    /// Resolves a textual cell back to a domain value. Empty cells are `Null`.
    pub fn parse_cell(&self, cell: &str) -> Option<Value> {
        if cell.is_empty() {
            return Some(Value::Null);
        }
        match &self.domain {
            Domain::Categorical(values) => values.iter().find(|v| v.to_string() == cell).cloned(),
            Domain::Numeric { lo, hi } => {
                let i: i64 = cell.trim().parse().ok()?;
                (*lo..=*hi).contains(&i).then_some(Value::Int(i))
            }
        }
    }

    fn validate(&self) -> Result<(), SchemaError> {
        match &self.domain {
            Domain::Categorical(values) => {
                if values.is_empty() {
                    return Err(SchemaError::EmptyDomain(self.name.clone()));
                }
                for (i, v) in values.iter().enumerate() {
                    if values[..i].contains(v) {
                        return Err(SchemaError::DuplicateValue(self.name.clone(), v.to_string()));
                    }
                }
                Ok(())
            }
            Domain::Numeric { lo, hi } if lo > hi => Err(SchemaError::InvalidRange {
                attribute: self.name.clone(),
                lo: *lo,
                hi: *hi,
            }),
            Domain::Numeric { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaSpec {
    pub name: String,
    pub description: String,
    pub attributes: Vec<AttributeSpec>,
    pub target_name: String,
    pub target_labels: Vec<String>,
}

impl SchemaSpec {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.attributes.is_empty() {
            return Err(SchemaError::NoAttributes);
        }
        for (i, attr) in self.attributes.iter().enumerate() {
            attr.validate()?;
            if self.attributes[..i].iter().any(|a| a.name == attr.name) {
                return Err(SchemaError::DuplicateAttribute(attr.name.clone()));
            }
        }
        if self.target_labels.len() < 2 {
            return Err(SchemaError::TooFewLabels(self.target_labels.len()));
        }
        for (i, l) in self.target_labels.iter().enumerate() {
            if self.target_labels[..i].contains(l) {
                return Err(SchemaError::DuplicateLabel(l.clone()));
            }
        }
        if self.attribute(&self.target_name).is_some() {
            return Err(SchemaError::TargetCollision(self.target_name.clone()));
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    /// Restricts the schema to `attrs` (in the given order) and `labels`.
    pub fn slice(&self, attrs: &[String], labels: &[String]) -> Result<SchemaSpec, SchemaError> {
        let attributes = attrs
            .iter()
            .map(|n| self.attribute(n).cloned().ok_or_else(|| SchemaError::UnknownAttribute(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let sliced = SchemaSpec {
            name: self.name.clone(),
            description: self.description.clone(),
            attributes,
            target_name: self.target_name.clone(),
            target_labels: labels.to_vec(),
        };
        sliced.validate()?;
        Ok(sliced)
    }

    /// Serializes to the schema document format. `load_schema` inverts this.
    pub fn to_document(&self) -> String {
        let mut columns = Map::new();
        for attr in &self.attributes {
            let entry = match &attr.domain {
                Domain::Categorical(values) => {
                    json!(["categorical", values.iter().map(Value::to_json).collect::<Vec<_>>()])
                }
                Domain::Numeric { lo, hi } => json!(["number", [lo, hi]]),
            };
            columns.insert(attr.name.clone(), entry);
        }
        let mut targets = Map::new();
        targets.insert(self.target_name.clone(), json!(self.target_labels));
        let mut doc = Map::new();
        doc.insert("name".into(), json!(self.name));
        doc.insert("description".into(), json!(self.description));
        doc.insert("column_names".into(), Json::Object(columns));
        doc.insert("targets".into(), Json::Object(targets));
        let mut out = serde_json::to_string_pretty(&Json::Object(doc)).expect("schema serializes");
        out.push('\n');
        out
    }
}

/// Parses a schema document. Attribute order follows the document.
pub fn load_schema(text: &str) -> Result<SchemaSpec, SchemaError> {
    let doc: Json = serde_json::from_str(text).map_err(|e| SchemaError::Malformed(e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| SchemaError::Malformed("top level must be an object".into()))?;

    let description = match obj.get("description") {
        None => String::new(),
        Some(Json::String(s)) => s.clone(),
        Some(_) => return Err(SchemaError::Malformed("`description` must be a string".into())),
    };

    let columns = obj
        .get("column_names")
        .and_then(Json::as_object)
        .ok_or_else(|| SchemaError::Malformed("missing `column_names` object".into()))?;
    let mut attributes = Vec::with_capacity(columns.len());
    for (name, entry) in columns {
        attributes.push(parse_column(name, entry)?);
    }

    let targets = obj
        .get("targets")
        .and_then(Json::as_object)
        .ok_or_else(|| SchemaError::Malformed("missing `targets` object".into()))?;
    if targets.len() != 1 {
        return Err(SchemaError::Malformed(format!("expected exactly one target column, found {}", targets.len())));
    }
    let (target_name, labels) = targets.iter().next().expect("one target");
    let target_labels = labels
        .as_array()
        .ok_or_else(|| SchemaError::Malformed(format!("target `{target_name}` must list labels")))?
        .iter()
        .map(|l| match l {
            Json::String(s) => Ok(s.clone()),
            other => Err(SchemaError::Malformed(format!("target labels must be strings, got {other}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let name = match obj.get("name") {
        None => target_name.clone(),
        Some(Json::String(s)) => s.clone(),
        Some(_) => return Err(SchemaError::Malformed("`name` must be a string".into())),
    };

    let schema = SchemaSpec { name, description, attributes, target_name: target_name.clone(), target_labels };
    schema.validate()?;
    Ok(schema)
}

fn parse_column(name: &str, entry: &Json) -> Result<AttributeSpec, SchemaError> {
    let malformed = || SchemaError::Malformed(format!("attribute `{name}`: expected [kind, domain]"));
    let pair = entry.as_array().filter(|a| a.len() == 2).ok_or_else(malformed)?;
    let kind = pair[0].as_str().ok_or_else(malformed)?;
    let domain = pair[1].as_array().ok_or_else(malformed)?;
    let attr = match kind {
        "categorical" => {
            let values = domain.iter().map(|v| Value::from_json(name, v)).collect::<Result<Vec<_>, _>>()?;
            AttributeSpec::categorical(name, values)
        }
        "number" => {
            let bound = |v: &Json| {
                v.as_i64().ok_or_else(|| SchemaError::Malformed(format!("attribute `{name}`: bounds must be integers")))
            };
            if domain.len() != 2 {
                return Err(SchemaError::Malformed(format!("attribute `{name}`: range must be [lo, hi]")));
            }
            AttributeSpec::numeric(name, bound(&domain[0])?, bound(&domain[1])?)
        }
        other => return Err(SchemaError::UnknownKind { attribute: name.into(), kind: other.into() }),
    };
    attr.validate()?;
    Ok(attr)
}

const BUILTIN_DOCUMENTS: [&str; 5] = [
    include_str!("../schemas/bird-species.json"),
    include_str!("../schemas/animal-species.json"),
    include_str!("../schemas/rainfall.json"),
    include_str!("../schemas/league-rank.json"),
    include_str!("../schemas/bond-relevance.json"),
];

/// The five synthetic table schemas.
pub fn builtin_schemas() -> Vec<SchemaSpec> {
    BUILTIN_DOCUMENTS
        .iter()
        .map(|doc| load_schema(doc).expect("builtin schema is valid"))
        .collect()
}

pub fn builtin_schema(name: &str) -> Option<SchemaSpec> {
    builtin_schemas().into_iter().find(|s| s.name == name)
}

/// An ordered row: attribute name to value, in column order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Example {
    fields: Vec<(String, Value)>,
}

impl Example {
    pub fn new(fields: Vec<(String, Value)>) -> Self {
        Self { fields }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn fields(&self) -> &[(String, Value)] {
        &self.fields
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.fields.iter().map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

impl Serialize for Example {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.fields.len()))?;
        for (k, v) in &self.fields {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// Samples one row over `selected` attributes, each value uniform over its domain.
pub fn sample_example<R: Rng + ?Sized>(
    schema: &SchemaSpec,
    selected: &[String],
    rng: &mut R,
) -> Result<Example, SchemaError> {
    if selected.is_empty() {
        return Err(SchemaError::EmptySelection);
    }
    let fields = selected
        .iter()
        .map(|name| {
            let attr = schema.attribute(name).ok_or_else(|| SchemaError::UnknownAttribute(name.clone()))?;
            Ok((name.clone(), attr.sample(rng)))
        })
        .collect::<Result<Vec<_>, SchemaError>>()?;
    Ok(Example::new(fields))
}
