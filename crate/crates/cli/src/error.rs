use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("config field {key}: {detail}")]
    Field { key: String, detail: String },
    #[error(transparent)]
    Core(#[from] bundlenet::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for invalid invocations or configs, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Parse { .. } | Self::Field { .. } => 2,
            Self::Core(bundlenet::Error::Config(_)) => 2,
            Self::Core(_) | Self::Io { .. } | Self::Json(_) => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }
}
