use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unknown keys or missing required values; exit status 2.
    #[error("{0}")]
    Usage(String),
    #[error("{module}: {source}")]
    Core {
        module: &'static str,
        #[source]
        source: ivregime_core::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

/// Tags a core error with the module that raised it.
pub trait Within<T> {
    fn within(self, module: &'static str) -> Result<T, CliError>;
}

impl<T> Within<T> for ivregime_core::Result<T> {
    fn within(self, module: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { module, source })
    }
}
