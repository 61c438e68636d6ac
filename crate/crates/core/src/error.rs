use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Numeric input outside the operation's domain (non-finite, non-positive, out of range).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input (unsorted series, shape mismatch, duplicate ids).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An exponential left the representable range.
    #[error("overflow: {0}")]
    Overflow(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by the caller's data rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Validation(_)
                | Error::InsufficientData(_)
                | Error::Overflow(_)
                | Error::Parse { .. }
        )
    }
}
