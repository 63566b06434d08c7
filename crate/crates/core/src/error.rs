use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    /// The residual vanished while fitting the scaled Lasso, so the noise
    /// level estimate collapsed to zero.
    #[error("degenerate response: residual norm fell below 1e-12 * ||y||")]
    DegenerateResponse,

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("every path point of column {0} is degenerate")]
    AllDegenerate(usize),

    #[error("score vectors were built on design {expected} but the fit uses design {found}")]
    ScoreMismatch { expected: String, found: String },

    #[error("negative variance a'Va = {0}")]
    NegativeVariance(f64),

    #[error("oracle projection for column {0} is degenerate")]
    DegenerateOracle(usize),

    #[error("{failed} of {total} replications failed, above the 5% cap")]
    TooManyFailures { failed: usize, total: usize },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("{0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
