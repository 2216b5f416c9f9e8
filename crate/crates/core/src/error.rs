use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A rollout produced a non-finite quantity.
    #[error("path failure at step {step}: non-finite {quantity}")]
    PathFailure { step: usize, quantity: &'static str },

    /// R + σ²GᵀVxxG stayed indefinite after jitter.
    #[error("singular control at step {step}: noise-adjusted control cost is not positive definite")]
    SingularControl { step: usize },

    #[error("Riccati oracle failed at node {node}: {reason}")]
    OracleFailure { node: usize, reason: String },

    #[error("non-finite loss contribution from sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("{failed} of {batch} paths failed (threshold {threshold:.0}%): {first}")]
    BatchFailure {
        failed: usize,
        batch: usize,
        threshold: f64,
        first: Box<Error>,
    },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Re-tag step-local failures with the rollout step they occurred at.
    pub fn at_step(self, at: usize) -> Self {
        match self {
            Error::PathFailure { quantity, .. } => Error::PathFailure { step: at, quantity },
            Error::SingularControl { .. } => Error::SingularControl { step: at },
            other => other,
        }
    }

    /// True for failures that come from numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PathFailure { .. }
                | Error::SingularControl { .. }
                | Error::OracleFailure { .. }
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteGradient { .. }
                | Error::BatchFailure { .. }
        )
    }
}
