use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("size error: {0}")]
    Size(String),

    /// The external backend died or timed out. `unprocessed` lists the
    /// lattice indices whose results never arrived.
    #[error("backend failure: {reason} ({} patches unprocessed)", unprocessed.len())]
    BackendFailure {
        reason: String,
        unprocessed: Vec<(u32, u32)>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend lacks capability: {0}")]
    Capability(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
