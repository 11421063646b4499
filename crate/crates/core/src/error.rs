use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the fitting, rendering and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("EmptyMask: ground-truth mask has no foreground pixels")]
    EmptyMask,

    #[error("NonFinite: {what} became non-finite{}", .iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    NonFinite {
        what: String,
        iteration: Option<usize>,
    },

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },

    #[error("{0}")]
    Format(#[from] ParseError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite {
            what: what.into(),
            iteration: None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// File-format errors. Each malformed input maps to exactly one variant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("bad magic number")]
    BadMagic,
    #[error("unsupported netpbm variant {0}")]
    UnsupportedVariant(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("unsupported maxval {0} (expected 255)")]
    MaxVal(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data: expected {expected} payload bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("schema violation in field `{field}`: {reason}")]
    Schema { field: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
