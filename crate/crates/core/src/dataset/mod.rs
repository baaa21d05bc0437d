//! Artifact types and the elementary numeric transforms over them.
//!
//! An [`EmbeddingSet`] is a labeled matrix of text-class embedding rows; a
//! [`PredictionSet`] is a matrix of raw per-sample logits over a candidate
//! class list plus ground-truth labels. Both load from a compact binary
//! tensor format or a CSV fallback (see [`tensor_file`] and [`csv_file`])
//! and are immutable once constructed.

pub mod csv_file;
pub mod manifest;
pub mod tensor_file;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

pub use manifest::{
    load_embedding_set, validate_artifacts, ArtifactManifest, ArtifactRole, SplitDescriptor,
    Violation,
};

/// Which exported embedding matrix a set holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    PretrainedBase,
    TunedBase,
    PretrainedQuery,
    TunedQuery,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::PretrainedBase => "pretrained_base",
            Role::TunedBase => "tuned_base",
            Role::PretrainedQuery => "pretrained_query",
            Role::TunedQuery => "tuned_query",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A labeled matrix of text-class embedding rows.
///
/// Row `i` is the embedding of `class_names[i]`. The `normalized` flag is
/// only set by [`normalize_rows`]; loaders always return `false` so the
/// normalize-then-score pipeline stays explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    class_names: Vec<String>,
    rows: Matrix,
    role: Role,
    normalized: bool,
}

impl EmbeddingSet {
    /// Builds a set from per-class rows, checking the structural invariants.
    pub fn new(class_names: Vec<String>, rows: Matrix, role: Role) -> Result<Self> {
        Self::with_normalized(class_names, rows, role, false)
    }

    pub(crate) fn with_normalized(
        class_names: Vec<String>,
        rows: Matrix,
        role: Role,
        normalized: bool,
    ) -> Result<Self> {
        if class_names.len() != rows.rows() {
            return Err(Error::LengthMismatch {
                left: class_names.len(),
                right: rows.rows(),
            });
        }
        if let Some(name) = first_duplicate(&class_names) {
            return Err(Error::DuplicateClassName { name });
        }
        Ok(EmbeddingSet {
            class_names,
            rows,
            role,
            normalized,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Per-sample raw logits over a candidate class list plus true labels.
///
/// Logits are ingested as exported: already multiplied by the scale
/// constant `tau`, so downstream transforms operate on full logit rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    class_names: Vec<String>,
    logits: Matrix,
    labels: Vec<usize>,
    tau: f64,
}

/// Scale constant assumed when an artifact does not record one.
pub const DEFAULT_TAU: f64 = 100.0;

impl PredictionSet {
    pub fn new(
        class_names: Vec<String>,
        logits: Matrix,
        labels: Vec<usize>,
        tau: f64,
    ) -> Result<Self> {
        if class_names.len() != logits.cols() {
            return Err(Error::LengthMismatch {
                left: class_names.len(),
                right: logits.cols(),
            });
        }
        if labels.len() != logits.rows() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: logits.rows(),
            });
        }
        if let Some(name) = first_duplicate(&class_names) {
            return Err(Error::DuplicateClassName { name });
        }
        if tau <= 0.0 || tau.is_nan() {
            return Err(Error::InvalidTau { value: tau });
        }
        for (sample, &label) in labels.iter().enumerate() {
            if label >= class_names.len() {
                return Err(Error::LabelOutOfRange {
                    sample,
                    label,
                    num_classes: class_names.len(),
                });
            }
        }
        for (i, row) in logits.iter_rows().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteLogit {
                        sample: i,
                        class: j,
                    });
                }
            }
        }
        Ok(PredictionSet {
            class_names,
            logits,
            labels,
            tau,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_samples(&self) -> usize {
        self.logits.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same samples and labels with the logit matrix replaced.
    pub fn with_logits(&self, logits: Matrix) -> Result<Self> {
        PredictionSet::new(
            self.class_names.clone(),
            logits,
            self.labels.clone(),
            self.tau,
        )
    }

    /// Per-sample argmax of the raw logits, first index on ties.
    pub fn predicted(&self) -> Vec<usize> {
        self.logits.iter_rows().map(argmax).collect()
    }
}

/// Rescales every row to unit Euclidean norm.
///
/// Idempotent up to floating-point noise; class order is preserved and the
/// result carries `normalized = true`.
pub fn normalize_rows(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut out = set.rows.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow {
                class: set.class_names[i].clone(),
            });
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    EmbeddingSet::with_normalized(set.class_names.clone(), out, set.role, true)
}

/// Numerically safe softmax of one logit row (max-subtraction form).
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_row_in_place(&mut out);
    out
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of the raw logits; each output row sums to 1 and keeps
/// the argmax of the corresponding logit row.
pub fn softmax(preds: &PredictionSet) -> Matrix {
    softmax_matrix(preds.logits())
}

pub(crate) fn softmax_matrix(logits: &Matrix) -> Matrix {
    let cols = logits.cols();
    let mut m = logits.clone();
    crate::par::for_each_chunk_mut(m.as_mut_slice(), cols, |_, row| softmax_row_in_place(row));
    m
}

pub(crate) fn first_duplicate(names: &[String]) -> Option<String> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Some(n.clone());
        }
    }
    None
}
