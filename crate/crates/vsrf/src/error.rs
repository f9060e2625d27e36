use std::path::PathBuf;

/// Errors from file formats, model persistence and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated {what}")]
    Truncated { path: PathBuf, what: String },
    #[error("{path}: unsupported {field}: {value}")]
    Unsupported {
        path: PathBuf,
        field: &'static str,
        value: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: not a model file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: model format version {found}, this build reads version {supported}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path}: tensor checksum mismatch (file is corrupt)")]
    ChecksumMismatch { path: PathBuf },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] vsrf_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status for this error: 1 usage, 2 data or validation,
    /// 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Core(e) if e.is_internal() => 3,
            _ => 2,
        }
    }
}
