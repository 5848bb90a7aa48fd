use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a structural invariant (shape, stochasticity, range).
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// A function was evaluated outside its domain (log of zero, λ = 0 where λ > 0 is needed, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Something that should be impossible for valid inputs happened.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
