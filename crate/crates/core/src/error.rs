//! Error type shared across the toolkit.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error(
        "payload length mismatch in {path}: header claims {expected} values, payload holds {found}"
    )]
    PayloadMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("csv matrix too large for the fallback format: {entries} entries (limit {limit})")]
    CsvTooLarge { entries: usize, limit: usize },

    #[error("bad csv record in {path}: {reason}")]
    BadCsvRecord { path: PathBuf, reason: String },

    #[error("duplicate class name: {name}")]
    DuplicateClassName { name: String },

    #[error("zero-norm row for class '{class}'")]
    ZeroNormRow { class: String },

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("label index {label} out of range for {num_classes} classes at sample {sample}")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("non-finite logit at sample {sample}, class {class}")]
    NonFiniteLogit { sample: usize, class: usize },

    #[error("tau must be positive, got {value}")]
    InvalidTau { value: f64 },

    #[error("k exceeds reference set: k={k}, reference rows={len}")]
    KOutOfRange { k: usize, len: usize },

    #[error("embedding set '{role}' is not normalized; run normalize_rows first")]
    NotNormalized { role: String },

    #[error("class order mismatch between {left} and {right}")]
    ClassOrderMismatch { left: String, right: String },

    #[error("class missing from TD score table: '{class}'")]
    MissingGamma { class: String },

    #[error("empty calibration set")]
    EmptyCalibrationSet,

    #[error("degenerate calibration set: {reason}")]
    DegenerateCalibrationSet { reason: String },

    #[error("temperature must be positive, got {value}")]
    InvalidTemperature { value: f64 },

    #[error("{kind} calibrator was fitted on a different class list; not applicable to this prediction set")]
    ClassListMismatch { kind: String },

    #[error("cannot compose: '{kind}' transforms probabilities, not logits, and cannot feed the second stage")]
    InvalidComposition { kind: String },

    #[error("empty prediction set")]
    EmptyPredictionSet,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("num_bins must be at least 1")]
    InvalidBinCount,

    #[error("missing score for class '{class}'")]
    MissingScore { class: String },

    #[error("invalid scenario config: {reason}")]
    InvalidConfig { reason: String },

    #[error("scale factor must be positive, got {value}")]
    InvalidFactor { value: f64 },

    #[error("manifest entry '{role}' is missing")]
    MissingManifestEntry { role: String },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported dtype code {code} in {path}")]
    UnsupportedDtype { path: PathBuf, code: u8 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
