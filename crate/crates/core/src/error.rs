//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient in parameter block '{block}'")]
    NonFiniteGradient { block: String },

    #[error("backward called with a stale or mismatched forward cache ({0})")]
    StaleCache(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadratic program is infeasible")]
    QpInfeasible,

    #[error("quadratic program matrix is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("linear program appears unbounded or regularization-sensitive: {0}")]
    LpUnbounded(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no shortfall states in pilot")]
    NoShortfallStates,

    #[error("margin requested for a shortfall state (epns = {epns} MW)")]
    MarginOnShortfall { epns: f64 },

    #[error("model has not been trained")]
    Untrained,

    #[error("csv parse error at row {row}, column '{column}': {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
