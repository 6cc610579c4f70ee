use thiserror::Error;

/// Errors surfaced by the engine, generators, and file codecs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A file exists but its contents are malformed.
    #[error("format error: {0}")]
    Format(String),
    /// Inputs violate a documented contract (shapes, ranges, missing data).
    #[error("validation error: {0}")]
    Validation(String),
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Prepends context to the message while keeping the error category
    /// (and, for I/O, the underlying [`std::io::ErrorKind`]).
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Io(io) => {
                let kind = io.kind();
                Error::Io(std::io::Error::new(kind, format!("{ctx}: {io}")))
            }
            Error::Format(m) => Error::Format(format!("{ctx}: {m}")),
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
