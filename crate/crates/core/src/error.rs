//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible (matmul, backward cache mismatch, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition on an argument value was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A pre-normalization embedding collapsed to (near) zero norm.
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    /// A classifier prototype row has (near) zero norm.
    #[error("degenerate classifier: {0}")]
    DegenerateClassifier(String),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    /// A checkpoint file failed structural validation.
    #[error("corrupt checkpoint ({section}): {detail}")]
    CorruptCheckpoint { section: String, detail: String },

    /// The checkpoint header declares a version this build cannot read.
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Identification was requested but the dataset has no gallery split.
    #[error("missing gallery: {0}")]
    MissingGallery(String),

    /// A pluggable component was wired up incompletely.
    #[error("configuration error: {0}")]
    Config(String),

    /// A text input (CSV, ...) failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
