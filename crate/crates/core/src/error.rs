use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// A record in a data file failed validation.
    #[error("parse error in record `{record}`: {reason}")]
    Parse { record: String, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated by the caller (e.g. mutating a frozen model).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An internal invariant failed.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            record: record.into(),
            reason: reason.into(),
        }
    }
}
