use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numerical error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
