use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad or incomplete configuration (unknown tokenizer, missing exemplars, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The backend cannot provide what was asked of it (e.g. no log-probabilities).
    #[error("capability error: {0}")]
    Capability(String),

    #[error("transport error: {0}")]
    Transport(String),

    /// All candidates of a sampling distribution have zero mass.
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("exemplar contamination: {0}")]
    Contamination(String),

    #[error("degenerate baseline: accuracy {accuracy} is at or below the collapse threshold {threshold}")]
    DegenerateBaseline { accuracy: f64, threshold: f64 },

    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),

    /// A strict run stopped at its first failure.
    #[error("run aborted: {0}")]
    Aborted(String),

    #[error("corrupted run artifact {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("run directory is locked: {0}")]
    Locked(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
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
