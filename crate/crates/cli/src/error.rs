use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] gazehoi::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(gazehoi::Error::Config(_)) => 2,
            CliError::Core(gazehoi::Error::NonFinite { .. }) => 4,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
