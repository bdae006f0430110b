use thiserror::Error;

/// Errors raised by the market, data and portfolio layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("implied volatility undefined: {0}")]
    ImpliedVol(String),

    #[error("missing column `{0}` in chain header")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },

    #[error("invalid OHLC ordering in rows {rows:?}")]
    OhlcViolation { rows: Vec<usize> },

    #[error("duplicate quote key {0}")]
    DuplicateKey(String),

    #[error("missing quote: {0}")]
    MissingQuote(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
