use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },

    #[error("duplicate rating for item {item} by user {user}")]
    DuplicateRating { item: String, user: String },

    #[error("rating {value} is not valid on scale {min}..{max} step {step}")]
    InvalidRating { value: f64, min: f64, max: f64, step: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    EmptyInput(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A network computation produced NaN or infinity.
    #[error("non-finite value in network computation")]
    NonFinite,

    #[error("training diverged in phase {phase} at epoch {epoch}")]
    Diverged { phase: String, epoch: usize },

    #[error("no eligible neighbors for cold-start prediction")]
    NoEligibleNeighbors,

    #[error("malformed model file at line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("every grid point failed: {0}")]
    AllDiverged(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
