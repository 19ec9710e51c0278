use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum DesomError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("could not generate a connected graph after {attempts} attempts (n={n}, r_c={r_c})")]
    RetryLimitExceeded { n: usize, r_c: f64, attempts: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("weight matrix is degenerate: {0}")]
    DegenerateWeights(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dense operation refused: np={np} exceeds the desk-scale limit {limit}")]
    DenseSizeLimit { np: usize, limit: usize },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("strong convexity lost: smallest Hessian eigenvalue {0:.3e} below threshold")]
    LostStrongConvexity(f64),

    #[error("series is not contracting: {0}")]
    NotContracting(String),

    #[error("unknown solver: {0}")]
    UnknownSolver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
