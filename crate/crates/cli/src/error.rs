use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("offline artifacts do not match the configuration:\n  {}", .diff.join("\n  "))]
    ArtifactMismatch { diff: Vec<String> },
    #[error(transparent)]
    Core(#[from] euq_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    /// 0 success, 1 I/O, 2 configuration, 3 model or numerics.
    pub fn exit_code(&self) -> i32 {
        use euq_core::Error as E;
        match self {
            CliError::Config { .. } | CliError::ArtifactMismatch { .. } => 2,
            CliError::Core(e) => match e {
                E::InvalidTau(_) | E::InvalidParameter(_) => 2,
                E::Io(_) | E::Csv(_) => 1,
                _ => 3,
            },
            CliError::Io { .. } | CliError::Json { .. } => 1,
            CliError::Invariant(_) => 3,
        }
    }
}
