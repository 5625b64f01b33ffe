use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments, shapes or configuration supplied by the caller.
    User,
    /// Unreadable, malformed or inconsistent files.
    Data,
    /// NaN/Inf, divergence, or other numerical breakdown.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss passed to backward must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph already consumed by a previous backward pass")]
    StaleGraph,

    #[error("batch norm used in infer mode before any running statistics exist")]
    MissingRunningStats,

    #[error("kernel form requires time-invariant parameters: {0}")]
    TimeVarying(String),

    #[error("NaN or infinite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("csv error in {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error("manifest mismatch: {0}")]
    Manifest(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape { .. }
            | Error::InvalidArgument { .. }
            | Error::NonScalarLoss(_)
            | Error::StaleGraph
            | Error::MissingRunningStats
            | Error::TimeVarying(_)
            | Error::Config(_) => ErrorKind::User,
            Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::Diverged { .. } => {
                ErrorKind::Numerical
            }
            Error::MalformedHeader(_)
            | Error::Truncated { .. }
            | Error::VersionMismatch { .. }
            | Error::Csv { .. }
            | Error::Manifest(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }
}
