use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Network(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("power flow: {0}")]
    PowerFlow(String),
    #[error("unsupported architecture: {0}")]
    Unsupported(String),
    #[error("state space too large: {0}")]
    StateSpace(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
