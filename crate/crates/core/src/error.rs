use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DamsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DamsError {
    /// Non-finite or otherwise out-of-domain numeric input.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// A batch that cannot be processed (everything padded, empty target, ...).
    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    /// API misuse, e.g. calling backward on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("length error: {what} has length {len}, maximum is {max}")]
    Length { what: &'static str, len: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input record; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Data { path: String, line: usize, msg: String },

    #[error("training diverged at step {step}: {component} is not finite")]
    Divergence { step: u64, component: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DamsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DamsError::Io { path: path.into(), source }
    }

    pub(crate) fn data(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        DamsError::Data {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("checkpoint version mismatch: bad magic or unsupported version {found}")]
    VersionMismatch { found: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint shape mismatch for {name}: file has {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
}
