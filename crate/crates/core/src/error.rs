use std::io;

use thiserror::Error;

pub type Result<T, E = ScanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("internal autodiff error: {0}")]
    Internal(String),

    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),

    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),

    #[error("objective is not deterministic; disable dropout before a gradient check")]
    NonDeterministic,

    #[error("token index {0} outside the vocabulary")]
    UnknownToken(usize),

    #[error("character {0:?} is not in the charset")]
    UnknownChar(char),

    #[error("sequence of length {len} exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("checkpoint configuration does not match the model: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ScanError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        ScanError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        ScanError::Format {
            what,
            detail: detail.into(),
        }
    }
}
