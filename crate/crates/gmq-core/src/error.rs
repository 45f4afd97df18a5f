//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by validation, numerics, and IO across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix handed to the eigensolver is not symmetric within tolerance.
    #[error("matrix is not symmetric: {0}")]
    NonSymmetric(String),

    /// Eigenvalue below the negative tolerance; the matrix is not a covariance.
    #[error("matrix is indefinite beyond tolerance: {0}")]
    IndefiniteBeyondTolerance(String),

    /// Operands disagree on dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Weights, probabilities, or component lists fail basic validation.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Operation needs a full-rank covariance but got a singular one.
    #[error("singular component: {0}")]
    SingularComponent(String),

    /// Interval bounds out of order.
    #[error("invalid interval: a={a} must not exceed b={b}")]
    InvalidInterval { a: f64, b: f64 },

    /// Requested point budget cannot be met.
    #[error("budget too small: {0}")]
    BudgetTooSmall(String),

    /// Iteration cap reached before the tolerance was met.
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),

    /// Lookup table file fails its integrity checks.
    #[error("corrupt lookup table: {0}")]
    CorruptTable(String),

    /// Shell thresholds not strictly ascending and positive.
    #[error("invalid shell thresholds: {0}")]
    InvalidThresholds(String),

    /// Frame fails orthogonality or positive-scale validation.
    #[error("invalid axes: {0}")]
    InvalidAxes(String),

    /// Scheme frame does not diagonalize the covariance within tolerance.
    #[error("scheme not aligned with distribution: {0}")]
    NotAligned(String),

    /// Scheme set with no entries.
    #[error("empty scheme set")]
    EmptySchemeSet,

    /// k-means target outside 1..=atom count.
    #[error("invalid cluster count: {0}")]
    InvalidK(String),

    /// Anything else the caller got wrong.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed or invalid input artifacts
    /// (as opposed to mathematical failures on well-formed input).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidParameter(_)
                | Error::CorruptTable(_)
                | Error::InvalidAxes(_)
                | Error::InvalidThresholds(_)
                | Error::InvalidInterval { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
