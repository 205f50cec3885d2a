use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Process exit statuses of the `eqdp` binary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Success = 0,
    /// Crash: I/O failure, numerical breakdown, anything unstructured.
    Failure = 1,
    Validation = 2,
    GenerationInfeasible = 3,
    BudgetExhausted = 4,
    AuditFailed = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Core(#[from] eqdp::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        HarnessError::Config {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: strip_position(&err.to_string()),
        }
    }

    pub fn status(&self) -> ExitStatus {
        match self {
            HarnessError::Config { .. } | HarnessError::Validation(_) => ExitStatus::Validation,
            HarnessError::Core(e) => core_status(e),
            HarnessError::Io { .. } | HarnessError::Csv(_) => ExitStatus::Failure,
        }
    }
}

pub fn core_status(e: &eqdp::Error) -> ExitStatus {
    use eqdp::Error::*;
    match e {
        GenerationInfeasible { .. } => ExitStatus::GenerationInfeasible,
        InvalidParameter(_) | Parse { .. } | SchemaVersion { .. } => ExitStatus::Validation,
        _ => ExitStatus::Failure,
    }
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
