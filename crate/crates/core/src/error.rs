use thiserror::Error;

/// Errors surfaced by the tracking, association, and analytics pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid scenario or module configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed or insufficient input data.
    #[error("data error: {0}")]
    Data(String),
    /// A numerical procedure failed (divergence, degenerate geometry).
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
