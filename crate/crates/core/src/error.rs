use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate key at row {0}")]
    DuplicateKey(usize),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("key domain overflow: {0}")]
    DomainOverflow(String),
    #[error("code {code} out of range for cardinality {cardinality}")]
    CodeOutOfRange { code: u32, cardinality: u32 },
    #[error("key column `{column}` holds non-integer value `{value}`")]
    NonIntegerKey { column: String, value: String },
    #[error("column `{0}` holds floating-point values")]
    FloatColumnRejected(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("corrupt model blob: {0}")]
    CorruptBlob(String),

    #[error("key {0} already exists")]
    KeyAlreadyExists(u64),
    #[error("key {0} not found")]
    KeyNotFound(u64),
    #[error("key out of domain: {0}")]
    KeyOutOfDomain(String),
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: u64, hi: u64 },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("missing component {}", .0.display())]
    MissingComponent(PathBuf),
    #[error("codec failure: {0}")]
    Codec(String),

    #[error("compression loss undefined for zero-byte data")]
    ZeroData,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("answer mismatch for key {key}: expected {expected}, got {actual}")]
    AnswerMismatch { key: u64, expected: String, actual: String },
    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
