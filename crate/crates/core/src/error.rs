use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
///
/// The variants are grouped so the CLI can map them onto its exit codes
/// (see [`Error::exit_code`]) and the C ABI onto its status codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing field `{field}`")]
    Schema { line: usize, field: String },

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("graph construction failed: {0}")]
    Construction(String),

    #[error("split failed: {0}")]
    Split(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("shape mismatch: expected {expected} columns, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("cannot fit model: {0}")]
    Fit(String),

    #[error("statistic undefined: {0}")]
    Stat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {path}: run the `{stage}` stage first")]
    Dependency { stage: &'static str, path: PathBuf },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn lookup(kind: &'static str, id: impl ToString) -> Self {
        Error::Lookup {
            kind,
            id: id.to_string(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status used by the command-line pipeline.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dependency { .. } => 3,
            _ => 4,
        }
    }
}
