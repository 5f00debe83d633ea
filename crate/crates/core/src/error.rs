use thiserror::Error;

/// Errors raised by validation, the solvers and the benchmark harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TflrError {
    #[error("matrix has no rows")]
    Empty,

    #[error("composition needs at least 2 components, got {cols}")]
    TooFewComponents { cols: usize },

    #[error("NegativeEntry: row {row}, column {col} holds {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("NonFiniteEntry: row {row}, column {col} is not a finite number")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("RowSumViolation: row {row} sums to {sum}, expected 1 within {tol:e}")]
    RowSumViolation { row: usize, sum: f64, tol: f64 },

    #[error("ZeroRowSum: row {row} has zero total and cannot be closed")]
    ZeroRowSum { row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("matrix block {block} is not positive definite")]
    NotPositiveDefinite { block: usize },

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("iteration limit of {limit} reached")]
    IterationLimit { limit: usize },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid Dirichlet concentration: {0}")]
    InvalidAlpha(String),

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("invalid benchmark grid: {0}")]
    InvalidGrid(String),

    #[error("records are not paired: {0}")]
    UnpairedRecords(String),

    #[error("scaling fit needs at least 3 distinct sizes, got {found}")]
    InsufficientSizes { found: usize },
}

pub type Result<T> = std::result::Result<T, TflrError>;
