use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid label distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid step size {0}: 1/step must be a positive integer")]
    InvalidStep(f64),

    #[error("insufficient samples for class {class}: need {needed}, pool has {available}")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("pool exhausted at grid point {point:?}: {source}")]
    PoolExhausted {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("covariance for class {0} is not positive definite")]
    NotPositiveDefinite(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("architecture fingerprint mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },

    #[error("missing shadow records for grid point {0:?}")]
    MissingRecords(Vec<f64>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::InvalidArch(_) | Error::InvalidStep(_) | Error::Config(_) => ErrorKind::Config,
            Error::PoolExhausted { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
