use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lexicon row {row}: {message}")]
    Lexicon { row: usize, message: String },

    #[error("connective {0:?} not found in lexicon")]
    Lookup(String),

    #[error("unalignable span {span:?}: best normalized distance {distance:.3}")]
    Unalignable { span: String, distance: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty segment: every frame is masked")]
    EmptySegment,

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("segmenter port: {0}")]
    Port(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
