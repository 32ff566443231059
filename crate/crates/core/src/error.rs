//! Crate-wide error type.
//!
//! The binary maps [`Error::Config`] to exit code 2 (usage or configuration
//! mistakes) and everything else to exit code 1.

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed corpus input; `line` is 1-based.
    #[error("{path}: line {line}: {msg}")]
    Corpus {
        path: String,
        line: usize,
        msg: String,
    },

    /// Bad configuration or command usage.
    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Malformed word-vector text file.
    #[error("vectors: {0}")]
    Vectors(String),

    /// An operation was called with arguments that violate its contract.
    #[error("{0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
