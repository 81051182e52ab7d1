use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("replicate {replicate} has length {len}, need at least {min}")]
    ReplicateTooShort {
        replicate: usize,
        len: usize,
        min: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss or gradient at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("line search exhausted {halvings} halvings at iteration {iteration}")]
    LineSearchExhausted { iteration: usize, halvings: usize },

    #[error("fit failed at lambda {lambda} for series {series}: {source}")]
    Fit {
        lambda: f64,
        series: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation diverged: {0}")]
    Divergence(String),

    #[error("VAR process is not stationary after {0} draws")]
    NonStationary(usize),

    #[error("parse error in {path} at row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("empty panel")]
    EmptyPanel,

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
