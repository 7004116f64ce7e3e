use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the activity pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    Shape {
        axis: String,
        expected: String,
        actual: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("rejected weight file, field `{field}`: {reason}")]
    WeightFile { field: String, reason: String },

    #[error("rejected record: {0}")]
    Record(String),

    #[error("rejected manifest: {0}")]
    Manifest(String),

    #[error("rejected frame source at byte offset {offset}: {reason}")]
    Frames { offset: u64, reason: String },

    #[error("{0}")]
    Data(String),

    #[error("parse error in {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        axis: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            axis: axis.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
