use thiserror::Error;

/// Errors raised by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or value left the domain an operation needs (non-SPD covariance,
    /// non-finite entries, ...).
    #[error("numeric domain error in {what}: {detail}")]
    NumericDomain { what: String, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("training failed: {0}")]
    Training(String),

    /// A score whose denominator is zero (no ground truth, no reference speech).
    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericDomain {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
