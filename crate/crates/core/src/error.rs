use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical check failed: {0}")]
    Numerical(String),
    #[error("unsupported for this network: {0}")]
    Unsupported(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
