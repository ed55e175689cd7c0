use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MorphBoostError>;

#[derive(Debug, Error)]
pub enum MorphBoostError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A cell could not be parsed. `row` is the 1-based line number in the
    /// file, `column` the 0-based column index.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("degenerate target: all {0} target values are identical")]
    DegenerateTarget(usize),

    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("model has no trees and no base score")]
    EmptyModel,

    #[error("task error: {0}")]
    Task(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

impl MorphBoostError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MorphBoostError::Io {
            path: path.into(),
            source,
        }
    }
}
