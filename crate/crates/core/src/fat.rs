//! Features-as-Text: `name | value` pairs joined by ` [SEP] `, and the
//! column-name scrambling transform.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::schema::Example;
use crate::seed::task_rng;

pub const FIELD_SEPARATOR: &str = " | ";
pub const PAIR_SEPARATOR: &str = " [SEP] ";

#[derive(Debug, Error, PartialEq)]
pub enum FatError {
    #[error("empty example")]
    EmptyExample,
    #[error("permutation over {permutation} columns applied to an example with {example}")]
    DomainMismatch { permutation: usize, example: usize },
    #[error("not a permutation: {0:?}")]
    NotAPermutation(Vec<usize>),
}

pub fn linearize(example: &Example) -> Result<String, FatError> {
    if example.is_empty() {
        return Err(FatError::EmptyExample);
    }
    let mut out = String::new();
    for (i, (name, value)) in example.fields().iter().enumerate() {
        if i > 0 {
            out.push_str(PAIR_SEPARATOR);
        }
        out.push_str(name);
        out.push_str(FIELD_SEPARATOR);
        out.push_str(&value.to_string());
    }
    Ok(out)
}

/// A permutation of column positions: the value at position `i` is
/// relabeled with the name at position `self[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnPermutation(Vec<usize>);

impl ColumnPermutation {
    pub fn new(targets: Vec<usize>) -> Result<Self, FatError> {
        let mut seen = vec![false; targets.len()];
        for &t in &targets {
            if t >= targets.len() || std::mem::replace(&mut seen[t], true) {
                return Err(FatError::NotAPermutation(targets));
            }
        }
        Ok(Self(targets))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random(n: usize, seed: u64) -> Self {
        let mut targets: Vec<usize> = (0..n).collect();
        targets.shuffle(&mut task_rng(seed));
        Self(targets)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &t) in self.0.iter().enumerate() {
            inv[t] = i;
        }
        Self(inv)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Moves each value under a permuted column name. Output keeps the original
/// name order, so `{a: 1, b: 2}` with `a <-> b` becomes `{a: 2, b: 1}`.
pub fn scramble(example: &Example, permutation: &ColumnPermutation) -> Result<Example, FatError> {
    let fields = example.fields();
    if fields.len() != permutation.len() {
        return Err(FatError::DomainMismatch { permutation: permutation.len(), example: fields.len() });
    }
    let inv = permutation.inverse();
    Ok(Example::new(
        fields
            .iter()
            .enumerate()
            .map(|(j, (name, _))| (name.clone(), fields[inv.0[j]].1.clone()))
            .collect(),
    ))
}
