use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {msg} (near {token:?})")]
    Parse {
        line: usize,
        token: String,
        msg: String,
    },

    #[error("malformed binary data: {0}")]
    Format(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("simulation aborted: {0}")]
    Sim(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn parse(line: usize, token: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            token: token.into(),
            msg: msg.into(),
        }
    }
}
