use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: header is missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}, row {row}: unknown attackerType code {code}")]
    UnknownAttackCode { path: PathBuf, row: usize, code: i64 },

    #[error("{path}, row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("column `{0}` has no finite values")]
    AllMissing(String),

    #[error("class `{0}` not found")]
    UnknownClass(String),

    #[error("dataset has no BENIGN class")]
    NoBenign,

    #[error("class `{class}` has {count} rows, need at least {needed}")]
    ClassTooSmall {
        class: String,
        count: usize,
        needed: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("negative value {value} in feature {feature}, row {row}")]
    NegativeFeature { feature: usize, row: usize, value: f64 },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("kernel matrix is singular even with jitter {0:e}")]
    Singular(f64),

    #[error("too many features for exhaustive enumeration: {got} > {max}")]
    TooManyFeatures { got: usize, max: usize },

    #[error("model is not fitted: {0}")]
    Unfitted(String),

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
