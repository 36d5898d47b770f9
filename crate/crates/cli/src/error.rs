use thiserror::Error;
use zrp_core::ZrpError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ZrpError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sweep finished with {failed} of {total} points failing")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    /// 1 for configuration and runtime errors, 2 for capacity errors, 3 for a partial sweep.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(ZrpError::Capacity { .. }) => 2,
            CliError::PartialSweep { .. } => 3,
            _ => 1,
        }
    }
}
