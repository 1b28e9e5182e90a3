use thiserror::Error;

/// Errors raised by estimators, samplers, mechanisms and learners.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("need at least {needed} clients, got {got}")]
    TooFewClients { needed: usize, got: usize },
    #[error("Renyi order must exceed 1, got {0}")]
    Order(f64),
    #[error("diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("privacy curve is unbounded at every order")]
    NoBudget,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg()))
    }
}
