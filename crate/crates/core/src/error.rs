use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value {value} at index {index} is outside the open interval ({lo}, {hi})")]
    Domain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("invalid marginal at index {index}: {reason}")]
    InvalidMarginal { index: usize, reason: String },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Failure raised by a simulator or by summarising its output.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulator produced a non-finite summary at index {index}")]
    NonFiniteSummary { index: usize },
    #[error("degenerate summary: {0}")]
    Degenerate(String),
    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    ParamDimension { expected: usize, got: usize },
    #[error("summary dimension mismatch: expected {expected}, got {got}")]
    SummaryDimension { expected: usize, got: usize },
    #[error("simulation failed: {0}")]
    Failed(String),
    #[error("simulation still invalid after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: usize, last: Box<SimError> },
}

impl SimError {
    /// Whether a fresh draw with another substream may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, SimError::NonFiniteSummary { .. } | SimError::Degenerate(_))
    }
}
