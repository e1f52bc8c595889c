use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("unsupported cipher `{0}`")]
    UnsupportedCipher(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("cipher failure for `{cipher}`: {reason}")]
    Cipher { cipher: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("amplifier: {0}")]
    Amplifier(#[source] std::io::Error),
}

impl FixtureError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FixtureError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = FixtureError> = std::result::Result<T, E>;
