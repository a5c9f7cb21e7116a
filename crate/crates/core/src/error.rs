use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the dataset, model and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: missing required column `{0}`")]
    MissingColumn(String),

    #[error("dataset has no usable data rows")]
    EmptyDataset,

    #[error("degenerate target: need at least 3 distinct RUL values, found {0}")]
    DegenerateTarget(usize),

    #[error("too few rows: {0}")]
    TooFewRows(usize),

    #[error("invalid fold count k={k} for n={n}")]
    InvalidK { k: usize, n: usize },

    #[error("invalid fraction {0}; must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("label {0} out of range; expected 0, 1 or 2")]
    Label(usize),

    #[error("length mismatch: {0} true labels vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("training diverged: non-finite loss at {stage} {index}")]
    Diverged { stage: &'static str, index: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("invalid model file: {0}")]
    ModelFile(String),

    #[error("events line {line}: {message}")]
    Events { line: usize, message: String },

    #[error("device link: {0}")]
    Link(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
