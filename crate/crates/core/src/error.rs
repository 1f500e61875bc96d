use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("range inverted at line {line}, field `{field}`: low {low} > high {high}")]
    RangeInversion {
        line: usize,
        field: String,
        low: i64,
        high: i64,
    },

    #[error("unknown block kind `{kind}` at line {line}")]
    UnknownBlock { line: usize, kind: String },

    #[error("invalid candidate: parameter `{parameter}`: {message}")]
    Validation { parameter: String, message: String },

    #[error("shape mismatch: expected {expected} inputs, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error(
        "checkpoint layout fingerprint mismatch: checkpoint has {found}, space has {expected}"
    )]
    LayoutMismatch { expected: String, found: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("rank correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("protocol error: {message} (line: {line:?})")]
    Protocol { message: String, line: String },

    #[error("evaluator error: {0}")]
    Evaluator(String),

    #[error("search error: {0}")]
    Search(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(parameter: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            parameter: parameter.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: u8) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}
