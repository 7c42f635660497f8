use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or experiment parameter is invalid. `key` is the JSON key
    /// path of the offending value, e.g. `q[3][7]` or `eps0`.
    #[error("invalid configuration at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("process {process} has eps0 = eps1 = 0; the chain never moves and has no stationary distribution")]
    DegenerateChain { process: usize },

    #[error("{n_processes} processes requested but exact filtering supports at most {max} (2^N belief entries)")]
    Capacity { n_processes: usize, max: usize },

    #[error("observation has zero likelihood under every hidden state")]
    Contradiction,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
