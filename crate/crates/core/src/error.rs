use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate plane: normal has zero length")]
    DegeneratePlane,

    #[error("cardinality error: {0}")]
    Cardinality(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("empty patch: no points within radius {radius} of seed")]
    EmptyPatch { radius: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("pipeline stage `{stage}` failed: {msg}")]
    Stage { stage: &'static str, msg: String },

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn stage(stage: &'static str, err: Error) -> Self {
        match err {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                msg: other.to_string(),
            },
        }
    }
}
