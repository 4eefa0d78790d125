use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped so the CLI can map them onto process exit codes:
/// validation and domain problems are caller mistakes, I/O is environmental,
/// and non-convergence is a numerical outcome the caller may want to retry.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("circular mean is undefined (mean resultant length {resultant_length:e} is below tolerance)")]
    UndefinedMean { resultant_length: f64 },

    #[error("angle is undefined for a near-zero component vector ({sin:e}, {cos:e})")]
    UndefinedAngle { sin: f64, cos: f64 },

    #[error("circular standard deviation is infinite (mean resultant length is zero)")]
    InfiniteDispersion,

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code: 1 validation, 2 I/O, 3 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::NonConvergence(_) => 3,
            _ => 1,
        }
    }
}
