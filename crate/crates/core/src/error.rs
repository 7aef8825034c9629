use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// API misuse: stepping a finished episode, sampling an empty buffer, ...
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration detected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input files or log data that exist but do not make sense.
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Nn(#[from] apfrl_nn::NnError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
