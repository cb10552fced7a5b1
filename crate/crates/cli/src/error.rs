use thiserror::Error;

/// Failure classes mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, unreadable or invalid configuration. Exit code 1.
    #[error("configuration error: {0}")]
    Config(String),
    /// A pipeline stage failed. Exit code 2.
    #[error("{stage} failed: {message}")]
    Runtime { stage: String, message: String },
}

impl CliError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn runtime(stage: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Runtime { stage: stage.to_string(), message: msg.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime { .. } => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a stage name to runtime failures.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::runtime(stage, e))
    }
}
