use thiserror::Error;

/// Errors produced by the zero range process computations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZrpError {
    /// An enumerated state space would exceed the configured limit.
    #[error("state space of size {size} exceeds the enumeration limit {limit}")]
    Capacity { size: u128, limit: u128 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for a space of size {size}")]
    OutOfRange { index: u128, size: u128 },

    #[error("iterative eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("truncation budget of {budget} terms exceeded")]
    TruncationBudget { budget: usize },

    #[error("test function has zero variance under the uniform law")]
    ZeroVariance,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// A coupling invariant failed. Always an implementation bug.
    #[error("coupling invariant violated: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, ZrpError>;
