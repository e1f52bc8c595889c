use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed capture: {0}")]
    MalformedCapture(String),

    #[error("bundle is missing mandatory file `{0}`")]
    MissingFile(String),

    #[error("{file}:{line}: malformed record: {source}")]
    MalformedRecord {
        file: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{file}:{line}: invalid record: {reason}")]
    InvalidRecord { file: String, line: usize, reason: String },

    #[error("{file}: {source}")]
    MalformedDocument {
        file: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("inconsistent corpus: {0}")]
    Consistency(String),

    #[error("unknown report format `{0}` (expected json or markdown)")]
    UnknownFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
