use std::io;

use thiserror::Error;

use crate::tensor::Shape4;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength { shape: Shape4, len: usize, expected: usize },

    #[error("channel mismatch in {op}: expected {expected}, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape4, rhs: Shape4 },

    #[error("{op} produces an empty output for input {input}")]
    EmptyOutput { op: &'static str, input: Shape4 },

    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("model is in {found} form, {op} requires {required} form")]
    WrongForm {
        op: &'static str,
        required: &'static str,
        found: &'static str,
    },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}

/// Failures while reading or writing a `PUSR` checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic {0:?}, expected \"PUSR\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unknown form code {0}")]
    UnknownForm(u8),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("file truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: u64, needed: u64, len: u64 },

    #[error("tensor `{name}` at offset {offset} overlaps the previous tensor or header (ends at {prev_end})")]
    Overlap { name: String, offset: u64, prev_end: u64 },

    #[error("tensor `{name}` offset {offset} is not 64-byte aligned")]
    Misaligned { name: String, offset: u64 },

    #[error("embedded config is invalid: {0}")]
    Config(String),

    #[error("tensor name is not valid UTF-8")]
    BadName,

    #[error("tensor `{0}` is declared by the model but missing from the file")]
    MissingTensor(String),

    #[error("tensor `{0}` in the file is not part of the model")]
    UnexpectedTensor(String),

    #[error("tensor `{0}` appears more than once")]
    DuplicateTensor(String),

    #[error("tensor `{name}` has shape {found:?}, config requires {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{name}` has dtype {found}, expected {expected}")]
    Dtype {
        name: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(u64),
}
