use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("template construction failed: {0}")]
    Construction(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("query on empty mesh")]
    EmptyMesh,

    #[error("occupancy label error: {0}")]
    Label(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(usize, usize, usize, usize),

    #[error("surface extraction failed: {0}")]
    Extraction(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("normal provider failed: {0}")]
    Provider(String),

    #[error("element {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error in {path:?}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by numerics rather than inputs or IO.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Evaluation(_) | Error::Extraction(_) | Error::Clustering(_)
        )
    }
}
