//! Synthetic classification tasks specified by natural-language
//! explanations, and an entailment-based classifier over them.

pub mod datio;
pub mod entail;
pub mod explang;
pub mod fat;
pub mod harness;
pub mod rules;
pub mod schema;
pub mod seed;
pub mod taskgen;

pub use entail::{
    aggregate_logits, predict, scores_to_logits, symbolic_entail, BackendSpec, ClassLogits, EntailError,
    EntailmentBackend, EntailmentScores, OracleMode, SymbolicBackend,
};
pub use explang::{parse_explanation, render_explanation, Explanation, ExplanationMeta, ParseContext};
pub use fat::{linearize, scramble, ColumnPermutation};
pub use rules::{Clause, LabelArity, Negation, Operator, Quantifier, Rule, RuleExpr, Structure, TaskType};
pub use schema::{builtin_schema, builtin_schemas, load_schema, AttributeSpec, Domain, Example, SchemaSpec, Value};
pub use taskgen::{generate_benchmark, generate_task, Benchmark, BenchmarkConfig, Task};
