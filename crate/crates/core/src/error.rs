use thiserror::Error;

/// Errors raised by the numerical core and the toy trainer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApoError {
    /// A scalar parameter is outside the domain of the operation.
    #[error("parameter `{name}` out of domain: {detail}")]
    Domain { name: &'static str, detail: String },
    /// Vector lengths disagree or are too short.
    #[error("shape error: {0}")]
    Shape(String),
    /// Inconsistent trainer or environment configuration.
    #[error("configuration error: {0}")]
    Config(String),
}

impl ApoError {
    pub(crate) fn domain(name: &'static str, detail: impl Into<String>) -> Self {
        ApoError::Domain {
            name,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ApoError>;
