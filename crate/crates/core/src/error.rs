use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    /// A standing hypothesis on the map family does not hold.
    #[error("hypothesis {hypothesis} violated: {detail}")]
    Hypothesis { hypothesis: &'static str, detail: String },

    #[error("inverse of branch {branch} did not converge (residual {residual:e})")]
    RootFinding { branch: usize, residual: f64 },

    #[error("grid mismatch: {left} cells vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("ball radius {eps} is below the cell width {cell_width}; use a finer grid")]
    BelowResolution { eps: f64, cell_width: f64 },

    #[error("branch count mismatch: {left} vs {right}")]
    BranchCountMismatch { left: usize, right: usize },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
