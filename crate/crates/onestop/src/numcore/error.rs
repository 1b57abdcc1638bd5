use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected {expected}, got shape {shape:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("softmax: row {row} is fully masked")]
    FullyMaskedRow { row: usize },

    #[error("{op}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type NumResult<T> = Result<T, NumError>;
