use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("trace has zero variance")]
    ZeroVariance,

    #[error("trace histogram is unimodal; two levels are required")]
    Unimodal,

    #[error("alignment undefined for an all-zero update")]
    ZeroUpdate,

    #[error("live buffer is cold ({fill}/{capacity} values); poll the transport until it is full")]
    ColdBuffer { fill: usize, capacity: usize },

    #[error("transport closed")]
    TransportClosed,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected,
            found,
        })
    }
}
