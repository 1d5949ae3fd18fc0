use thiserror::Error;

/// Errors raised by integration, gradient, and training routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("non-finite value in {context}")]
    NonFiniteValue { context: &'static str },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("terminal time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("terminal variance {variance:e} is at or below the floor {floor:e}")]
    ZeroVariance { variance: f64, floor: f64 },

    #[error("Fisher matrix is not invertible to working precision")]
    SingularFisher,

    #[error("training diverged at epoch {epoch}: {reason}")]
    DivergenceDetected { epoch: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
