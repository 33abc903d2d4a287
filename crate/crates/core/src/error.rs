//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VagError {
    /// Tensor shapes that cannot be combined; names both shapes.
    #[error("dimension mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation was called with a configuration it does not support.
    #[error("unsupported config for {op}: {detail}")]
    UnsupportedConfig { op: &'static str, detail: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// Index or count outside the valid range.
    #[error("out of bounds in {op}: {detail}")]
    Bounds { op: &'static str, detail: String },

    /// Malformed on-disk data; names the byte offset where parsing failed.
    #[error("format error at offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// A file ended before its header-declared payload.
    #[error("truncated file: {detail}")]
    Truncated { detail: String },

    #[error("NaN gradient in parameter '{param}' at step {step}")]
    NanGrad { param: String, step: u64 },

    #[error("NaN loss at step {step}; last good checkpoint is from epoch {last_good_epoch}")]
    NanLoss { step: u64, last_good_epoch: i64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VagError>;

impl VagError {
    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        VagError::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub fn unsupported(op: &'static str, detail: impl Into<String>) -> Self {
        VagError::UnsupportedConfig {
            op,
            detail: detail.into(),
        }
    }

    pub fn bounds(op: &'static str, detail: impl Into<String>) -> Self {
        VagError::Bounds {
            op,
            detail: detail.into(),
        }
    }
}
