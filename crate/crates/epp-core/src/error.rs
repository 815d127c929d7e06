use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum EppError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at data row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate row label {label:?}")]
    DuplicateLabel { label: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate projection: scores have zero variance")]
    DegenerateProjection,

    #[error("data has no variation")]
    NoVariation,

    #[error("unknown or ambiguous name {given:?}; choices: {choices}")]
    NameResolution { given: String, choices: String },

    #[error("objective returned a non-finite value at direction {direction:?}")]
    NonFiniteObjective { direction: Vec<f64> },

    #[error("run {run} failed: {source}")]
    RunFailed {
        run: usize,
        #[source]
        source: Box<EppError>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("run file: {0}")]
    RunFile(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EppError>;
