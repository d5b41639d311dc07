use thiserror::Error;

/// Errors produced by parameter derivation, table construction, verification
/// and extraction.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("too large: {0}")]
    TooLarge(String),

    #[error("no balanced table exists at these parameters")]
    NotFound,

    #[error("index out of range: {what} = {value} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: u64,
        limit: u64,
    },

    #[error("block {block} needs an explicit table of n_exp={n_exp} beyond the cap and keyed fallback is disabled")]
    BlockTooLarge { block: u32, n_exp: u64 },

    #[error("stream exhausted: bit {pos} requested, stream holds {len} bits")]
    StreamExhausted { pos: u64, len: u64 },

    #[error("malformed table file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
