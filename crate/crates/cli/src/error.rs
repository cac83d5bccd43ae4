use cgpo::CgpoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("numeric divergence: {0}")]
    Divergence(CgpoError),

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },

    #[error(transparent)]
    Core(CgpoError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Divergence(_) => 3,
            CliError::CorruptCheckpoint { .. } => 4,
            _ => 1,
        }
    }
}

impl From<CgpoError> for CliError {
    fn from(e: CgpoError) -> Self {
        match e {
            CgpoError::InvalidConfig { field, reason } => CliError::Config { field, reason },
            e if e.is_numeric() => CliError::Divergence(e),
            e => CliError::Core(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
