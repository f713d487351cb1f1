use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// The CLI maps these onto process exit codes via [`Error::exit_code`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller handed over data with the wrong shape or an empty set.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A persisted artifact does not match its schema.
    #[error("{path}: parse error at {pointer}: {message}")]
    Parse {
        path: PathBuf,
        /// JSON pointer (or `line N` for line-oriented formats).
        pointer: String,
        message: String,
    },

    /// A checkpoint written by an incompatible format version.
    #[error("{path}: incompatible format_version {found} (expected {expected})")]
    Incompatible {
        path: PathBuf,
        found: u64,
        expected: u64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) => 2,
            Error::Parse { .. } | Error::Incompatible { .. } | Error::Io { .. } | Error::Csv(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}
