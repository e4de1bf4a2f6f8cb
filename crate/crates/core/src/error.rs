use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("{solver} did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { solver: &'static str, residual: f64, iterations: usize },
    #[error("macro part is not in the discrete kernel: |dh pi| = {violation:e} > {tol:e}")]
    KernelViolation { violation: f64, tol: f64 },
    #[error("run diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
