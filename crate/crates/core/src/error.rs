use std::path::PathBuf;

use thiserror::Error;

use crate::model::{ProductId, UserId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inventory must contain at least one product")]
    EmptyInventory,

    #[error("duplicate product id `{0}`")]
    DuplicateProductId(ProductId),

    #[error("product `{0}` has an empty brand")]
    EmptyBrand(ProductId),

    #[error("unknown product id `{0}`")]
    UnknownProduct(ProductId),

    #[error("window capacity must be at least 1, got {0}")]
    InvalidWindowCapacity(usize),

    #[error("score vector length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("expected a {expected} score vector, got {actual}")]
    WrongScoreKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid score at position {position}: {value}")]
    InvalidScore { position: usize, value: f64 },

    #[error("event for user `{found}` does not belong to user `{expected}`")]
    ForeignUserEvent { expected: UserId, found: UserId },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("events out of order: timestamp {found} follows {previous}")]
    OutOfOrderEvents { previous: i64, found: i64 },

    #[error("cannot compute freshness of an empty recommendation list")]
    EmptyList,

    #[error("batch size {h} does not divide list length {n}")]
    IndivisibleBatch { n: u64, h: u64 },

    #[error("shuffle space size overflows for n = {0}")]
    Overflow(u64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported snapshot version `{0}`")]
    UnsupportedVersion(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the input data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
