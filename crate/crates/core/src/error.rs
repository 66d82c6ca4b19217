use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("basis mismatch: expected `{expected}`, found `{found}`")]
    BasisMismatch { expected: String, found: String },
    #[error("rank deficient: requested {requested}, achieved {achieved}")]
    RankDeficient { requested: usize, achieved: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("format error in {field}: {detail}")]
    Format { field: String, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
