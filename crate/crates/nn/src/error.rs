use thiserror::Error;

/// Errors produced by tensor, network, and optimizer operations.
#[derive(Debug, Error)]
pub enum NnError {
    /// Shapes or layer configuration cannot produce a valid computation.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse such as backward without a cached forward pass.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN or Inf appeared in a tensor that must stay finite.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("weight file error: {0}")]
    Io(#[from] std::io::Error),

    /// Weight file exists but does not parse or does not match the network.
    #[error("weight file format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NnError>;
