use thiserror::Error;

/// Errors produced anywhere in the estimation, pricing and attack pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document. `line` and `column` are 1-based, 0 when unknown.
    #[error("parse error at line {line}, column {column} ({field}): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    /// A structurally valid document that breaks a model invariant.
    #[error("invalid {element}: {reason}")]
    Invalid { element: String, reason: String },

    #[error("network is disconnected: bus {bus} cannot reach the reference bus")]
    Disconnected { bus: usize },

    #[error("measurement model is unobservable: rank {rank} < state dimension {dim}")]
    Unobservable { rank: usize, dim: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(element: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            element: element.into(),
            reason: reason.into(),
        }
    }
}
