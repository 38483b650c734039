use thiserror::Error;

/// Errors raised by the solvers, oracles and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("value outside admissible range: {0}")]
    Range(String),

    #[error("internal numerics failure: {0}")]
    Numerics(String),

    #[error("matrix game solver exhausted {iterations} iterations; best certified gap {best_gap:e} > tol {tol:e}")]
    SolverBudget {
        iterations: usize,
        best_gap: f64,
        tol: f64,
    },

    #[error("enumeration budget exceeded: {required} > {budget}; use the sampled lower bound instead")]
    EnumerationBudget { required: f64, budget: f64 },

    #[error("{path}: line {line}: {message}")]
    GameFile {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
