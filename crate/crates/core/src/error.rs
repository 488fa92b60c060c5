use thiserror::Error;

use crate::graph::OperatorKind;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no latency model for operator kind {0}")]
    UnsupportedOperator(OperatorKind),

    #[error("device #{0} is not active")]
    DeviceUnavailable(usize),

    #[error("bandwidth trace exhausted with {remaining_bits:.0} bits left to send")]
    TraceExhausted { remaining_bits: f64 },

    #[error("atom {atom} ({bytes} bytes) cannot fit in cache capacity {capacity}")]
    CannotFit { atom: usize, bytes: u64, capacity: u64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
