use std::path::PathBuf;

/// Errors produced by the nowcasting library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A CSV input violated its schema. `row` is the 1-based line number
    /// when the problem is tied to one line.
    #[error("{}{}: {reason}", .file.display(), .row.map(|r| format!(": line {r}")).unwrap_or_default())]
    Schema {
        file: PathBuf,
        row: Option<usize>,
        reason: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("series too short: need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(file: impl Into<PathBuf>, row: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            row,
            reason: reason.into(),
        }
    }
}
