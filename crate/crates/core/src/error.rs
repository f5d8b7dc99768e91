use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("empty action")]
    EmptyAction,

    #[error("action of length {len} exceeds maximum length {max}")]
    ActionTooLong { len: usize, max: usize },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("action space of size {size} exceeds enumeration limit {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    #[error("support violation: token {token} has positive probability under the policy but zero under the reference")]
    SupportViolation { token: usize },

    #[error("token index {j} out of range for action of length {len}")]
    IndexOutOfRange { j: usize, len: usize },

    #[error("no convergence after {iterations} iterations (last sup-norm delta {delta:e})")]
    NonConvergence { iterations: usize, delta: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
