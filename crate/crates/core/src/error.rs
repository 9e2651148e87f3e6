use thiserror::Error;

/// Errors raised by the simulation and validation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("divergence at mode k={k}, t={t}: |value| = {magnitude}")]
    Divergence { k: i32, t: f64, magnitude: f64 },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
