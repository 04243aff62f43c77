use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector {index} has (near) zero norm")]
    ZeroVector { index: usize },

    #[error("public fraction {fraction} leaves an empty part for n = {n}")]
    BadFraction { fraction: f64, n: usize },

    #[error("dataset is empty or too small: {0}")]
    EmptyDataset(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid target dimension k = {k} for dimension {dim}")]
    BadK { k: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid privacy budget: {0}")]
    BadBudget(String),

    #[error("zeta must lie in (0, 1], got {0}")]
    BadZeta(f64),

    #[error("candidate list is empty or lengths disagree")]
    EmptyCandidates,

    #[error("non-finite utility at index {0}")]
    NonFinite(usize),

    #[error("noise multiplier must be positive, got {0}")]
    BadSigma(f64),

    #[error("target epsilon {0} is unreachable with noise multiplier <= 1e6")]
    Unreachable(f64),

    #[error("invalid optimizer schedule: {0}")]
    BadSchedule(String),

    #[error("infeasible parameters: {0}")]
    InfeasibleParams(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("row {row} has {found} feature columns, expected {expected}")]
    InconsistentWidth { row: usize, expected: usize, found: usize },

    #[error("unknown label {label} at row {row}")]
    UnknownLabel { row: usize, label: i64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
