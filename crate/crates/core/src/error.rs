use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants are grouped so that the command-line front end can map each
/// one onto a stable exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration or command-line usage.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A symmetric positive-definite factorization broke down.
    #[error("factorization failed: matrix is not positive definite (minimum pivot {min_pivot:e})")]
    NotPositiveDefinite { min_pivot: f64 },

    /// A non-finite value appeared inside an iterative update.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("solver did not converge after {iters} iterations (residual {residual:e})")]
    Convergence { iters: usize, residual: f64 },

    /// A Stage-I column failed; wraps the underlying cause.
    #[error("stage I column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    /// A cross-validation fold failed; wraps the underlying cause.
    #[error("cross-validation fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    /// Malformed input data.
    #[error("{path}: row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Domain(_)
            | Error::Dimension(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::NotPositiveDefinite { .. } | Error::Numerical(_) | Error::Convergence { .. } => {
                3
            }
            Error::Column { source, .. } | Error::Fold { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
