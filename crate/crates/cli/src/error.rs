use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Image { path: String, reason: String },
    #[error(transparent)]
    Core(#[from] irgs::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 3 for numeric failures inside the pipeline, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(irgs::Error::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}
