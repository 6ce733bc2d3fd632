use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum VcmError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("measure error: {0}")]
    Measure(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("solver diverged at iteration {iteration}: objective {objective}")]
    Divergence { iteration: usize, objective: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VcmError {
    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, VcmError::Numerical(_) | VcmError::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, VcmError>;
