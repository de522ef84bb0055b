//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user configuration: missing columns, unknown options, bad flags.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates an invariant. `row` is 1-based over data rows.
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    /// Input data violates an invariant that is not tied to a single row.
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be invertible is not.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Marginal density vanished for some record even in log space.
    #[error("record {record}: marginal density is zero; widen the component grid")]
    Support { record: usize },

    /// Non-finite objective or derivative during optimization.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// Iterative procedure failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(row: usize, message: impl Into<String>) -> Self {
        Error::Validation { row, message: message.into() }
    }
}
