use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("data {path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: lmdnn_core::Error,
    },

    #[error("data: {0}")]
    MissingData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] lmdnn_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for unreadable or
    /// malformed data, 4 for divergence, 1 for anything else.
    pub fn exit_code(&self) -> u8 {
        use lmdnn_core::Error as Core;
        match self {
            Error::Config(_) | Error::ConfigParse { .. } => 2,
            Error::Data { .. } | Error::MissingData(_) => 3,
            Error::Io { .. } => 1,
            Error::Core(e) => match e {
                Core::Divergence { .. } => 4,
                Core::Format { .. } => 3,
                Core::InvalidSpec(_)
                | Core::Shape { .. }
                | Core::InvalidArgument(_)
                | Core::Unsupported(_)
                | Core::Hypothesis(_) => 2,
            },
        }
    }
}
