use thiserror::Error;

use crate::attack::AttackTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The attack objective became non-finite. The trace holds every
    /// iteration recorded before the failure.
    #[error("attack diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        partial: Box<AttackTrace>,
    },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
