use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semi-definite (lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e})")]
    NotPsd { lambda_min: f64, lambda_max: f64 },

    #[error("matrix is singular or not strictly positive definite (lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e})")]
    Singular { lambda_min: f64, lambda_max: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("block list is empty")]
    EmptyBlocks,

    #[error("layer partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("invalid sketch: {0}")]
    InvalidSketch(String),

    #[error("sketch layer has {count} outcomes, more than the enumeration limit {limit}")]
    OutcomeOverflow { count: u128, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: usize,
        message: String,
    },

    #[error("stepsize is infeasible: {0}")]
    Infeasible(String),

    #[error("iteration {iteration} diverged: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
