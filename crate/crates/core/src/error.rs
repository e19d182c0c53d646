use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by the process exit code they map to, see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("support violation: {0}")]
    Support(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 1 usage/config, 2 data/schema, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Dimension(_)
            | Error::Empty(_)
            | Error::Schema(_)
            | Error::Data(_)
            | Error::Support(_)
            | Error::Io { .. }
            | Error::Format { .. } => 2,
            Error::NonFinite(_) | Error::Diverged { .. } => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, detail: impl ToString) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            detail: detail.to_string(),
        }
    }
}
