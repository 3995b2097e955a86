use std::path::PathBuf;

/// Everything the toolkit can fail with. [`Error::exit_code`] maps it onto the
/// CLI's exit status.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] tokenpool_core::Error),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for failed assertions and unmeetable targets, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Assertion(_) => 1,
            Error::Core(tokenpool_core::Error::SloUnmeetable { .. }) => 1,
            _ => 2,
        }
    }
}
