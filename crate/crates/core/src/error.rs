use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("header does not match schema (missing: {missing:?}, unexpected: {unexpected:?})")]
    HeaderMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("column `{column}` is declared binary but has levels {levels:?}")]
    NotBinary { column: String, levels: Vec<String> },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{column}` has {count} missing value(s)")]
    MissingValues { column: String, count: usize },

    #[error("column `{column}` has kind {actual}, expected {expected}")]
    WrongKind {
        column: String,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("group {0} is empty")]
    EmptyGroup(u8),

    #[error("no rows with group={group}, label={label}")]
    EmptyCell { group: u8, label: u8 },

    #[error("stage `{stage}`: {reason}")]
    Stage { stage: String, reason: String },

    #[error("stage `{stage}` model failed: {source}")]
    StageFit {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("model did not converge after {iterations} iterations (gradient max-norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
