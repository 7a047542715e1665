use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must share a grid or dimension do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorisation or solver broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// Ask/tell protocol misuse.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Protocol(_) => 3,
            Error::Numerical(_) => 4,
            _ => 1,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
