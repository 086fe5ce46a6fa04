use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("point lies outside the feasible set")]
    Infeasible,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("oracle `{0}` is not available for this problem")]
    MissingOracle(&'static str),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("run diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
