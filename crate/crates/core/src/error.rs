use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("action sequence of length {len} exceeds horizon {horizon}")]
    SequenceTooLong { len: usize, horizon: usize },

    #[error("action {action} out of range (action count {count})")]
    InvalidAction { action: usize, count: usize },

    #[error("level {level} is outside the horizon {horizon}")]
    HorizonExceeded { level: usize, horizon: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("generation infeasible after {attempts} attempts: could not satisfy {constraint}")]
    GenerationInfeasible { constraint: String, attempts: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
