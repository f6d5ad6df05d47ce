use thiserror::Error;

/// Errors produced by identification, control design and the benchmark harness.
#[derive(Debug, Error)]
pub enum TpcError {
    #[error("insufficient data: {context} needs at least d = {needed} samples, got d = {got}")]
    InsufficientData {
        context: String,
        needed: usize,
        got: usize,
    },

    #[error("{matrix} is rank deficient: numerical rank {rank} < {rows} rows")]
    RankDeficient {
        matrix: String,
        rank: usize,
        rows: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = TpcError> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> TpcError {
    TpcError::Dimension(msg.into())
}
