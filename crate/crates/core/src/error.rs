use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("k = {k} exceeds the {distinct} distinct points in the corpus")]
    TooManyClusters { k: usize, distinct: usize },

    #[error("degenerate score range: {0}")]
    Degenerate(String),

    #[error("malformed polygon for area `{oa_id}`: {reason}")]
    MalformedPolygon { oa_id: String, reason: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
