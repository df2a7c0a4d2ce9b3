use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain violation at element {index}: {detail} (value {value})")]
    Domain {
        index: usize,
        value: f64,
        detail: &'static str,
    },

    #[error("non-finite value produced by {op} at element {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward requires a scalar loss, got a {rows}x{cols} tensor")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
