use std::path::PathBuf;

/// Errors surfaced by the command-line front end and file formats.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad user input; exit code 2.
    #[error("{0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] rctkg_core::Error),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Format { .. } => 2,
            CliError::Core(rctkg_core::Error::InvalidConfig { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}
