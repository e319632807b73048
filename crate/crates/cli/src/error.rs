//! Runner error type with scriptable exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Config file problem tied to a specific line (1-based).
    #[error("config error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    /// Config problem not tied to a line (missing file, bad override, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; the stage name is preserved.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        source: pxkd_core::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Exit codes: 0 success, 2 config error, 3 training divergence,
    /// 4 i/o error, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigLine { .. } | CliError::Config(_) => 2,
            CliError::Stage { source, .. } => match source {
                pxkd_core::Error::Divergence { .. } => 3,
                pxkd_core::Error::Io(_) => 4,
                _ => 1,
            },
            CliError::Io(_) => 4,
            CliError::Json(_) => 1,
        }
    }
}

/// Helper to tag a core error with its pipeline stage.
pub fn stage_err(stage: impl Into<String>) -> impl FnOnce(pxkd_core::Error) -> CliError {
    let stage = stage.into();
    move |source| CliError::Stage { stage, source }
}
