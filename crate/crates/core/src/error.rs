use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: csv error: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Malformed or semantically invalid input data. `row` is the 1-based
    /// data row (header excluded) when the problem is row-local.
    #[error("{path}{}: {message}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    InvalidInput {
        path: PathBuf,
        row: Option<usize>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power iteration did not converge after {iterations} iterations (last bracket [{lower}, {upper}])")]
    NoConvergence {
        iterations: usize,
        lower: f64,
        upper: f64,
    },

    #[error("relaxation exceeded {max_rounds} rounds in period {period}; parameters likely violate the contraction condition")]
    RelaxBudgetExceeded { period: u64, max_rounds: usize },

    #[error("cell {cell}, replication {replication}: {source}")]
    Replication {
        cell: usize,
        replication: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(
        path: impl Into<PathBuf>,
        row: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::InvalidInput {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    /// True for failures raised by the simulation engine rather than by
    /// input validation.
    pub fn is_runtime(&self) -> bool {
        match self {
            Error::RelaxBudgetExceeded { .. } | Error::NoConvergence { .. } => true,
            Error::Replication { source, .. } => source.is_runtime(),
            _ => false,
        }
    }
}
