use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, the fitting loop and the dataset tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: need at least {required}, got {actual}")]
    InsufficientPoints { required: usize, actual: usize },

    #[error("non-finite coordinate at point {point}")]
    NonFinitePoint { point: usize },

    #[error("degenerate neighborhood at point {point}: {reason}")]
    DegenerateNeighborhood { point: usize, reason: String },

    #[error("inverted neighborhood at point {point} (det F = {det})")]
    Inverted { point: usize, det: f64 },

    #[error("size mismatch for {what}: expected {expected}, got {actual}")]
    SizeMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid index {index} for {what} (len {len})")]
    InvalidIndex {
        what: String,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite energy at the initial configuration")]
    NonFiniteInitialEnergy,

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("fit aborted at frame {frame}: {reason}")]
    FitAborted { frame: usize, reason: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the error originates in a numerical solve rather than in
    /// malformed input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Inverted { .. }
                | Error::NonFiniteInitialEnergy
                | Error::LinearSolve(_)
                | Error::Solver(_)
                | Error::FitAborted { .. }
        )
    }

    pub(crate) fn size(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::SizeMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
