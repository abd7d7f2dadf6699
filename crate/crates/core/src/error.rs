use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the toolkit.
///
/// [`Error::kind`] groups variants into the coarse categories the CLI maps
/// onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited text: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("header has no column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: no canonical {field} for label {value:?}")]
    UnknownLabel {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("row {row}, column {column:?}: cannot parse reflectance {value:?}")]
    BadReflectance {
        row: usize,
        column: String,
        value: String,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {class} has {count} samples; at least {required} required")]
    SparseClass {
        class: String,
        count: usize,
        required: usize,
    },
    #[error("matrix is not positive definite (pivot {pivot} at index {index}); increase the shrinkage parameter")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("{0}")]
    Numerical(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NotPositiveDefinite { .. } | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Fold { source, .. } => source.kind(),
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

pub type Result<T> = std::result::Result<T, Error>;
