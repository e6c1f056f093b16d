//! Wire types for the deepmap HTTP service. Every path names a file or
//! directory on the server's filesystem.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use deepmap_core::bench::{Comparison, Report, SyntheticSpec, WorkloadSpec};
pub use deepmap_core::hybrid::{ModelRecipe, RetrainStrategy};
pub use deepmap_core::mhas::{SearchConfig, SearchSpace, TraceRow, DESK_SIZES, FULL_SIZES};
pub use deepmap_core::neural::TrainConfig;
pub use deepmap_core::repr::{BuildOptions, Repr};
pub use deepmap_core::store::{LookupStats, StorageBreakdown};

pub const API_VERSION: &str = "v1";

pub mod routes {
    pub const HEALTH: &str = "/v1/health";
    pub const GENERATE: &str = "/v1/generate";
    pub const INGEST: &str = "/v1/ingest";
    pub const BUILD: &str = "/v1/build";
    pub const SEARCH: &str = "/v1/search";
    pub const QUERY: &str = "/v1/query";
    pub const INSERT: &str = "/v1/insert";
    pub const DELETE: &str = "/v1/delete";
    pub const UPDATE: &str = "/v1/update";
    pub const COMPACT: &str = "/v1/compact";
    pub const BENCH: &str = "/v1/bench";
    pub const COMPARE: &str = "/v1/compare";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// Error category carried in every failed response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Malformed input, schema or configuration.
    Invalid,
    NotFound,
    Conflict,
    /// A store answered differently from the source relation.
    AnswerMismatch,
    /// The operation needs a mutable (hybrid) store.
    ReadOnly,
    Internal,
}

impl From<&deepmap_core::Error> for ErrorKind {
    fn from(e: &deepmap_core::Error) -> Self {
        use deepmap_core::Error as E;
        match e {
            E::KeyNotFound(_) | E::MissingComponent(_) => ErrorKind::NotFound,
            E::KeyAlreadyExists(_) | E::DuplicateKey(_) => ErrorKind::Conflict,
            E::AnswerMismatch { .. } => ErrorKind::AnswerMismatch,
            E::Io(_) | E::Codec(_) | E::CorruptBlob(_) | E::CorruptManifest(_) => ErrorKind::Internal,
            _ => ErrorKind::Invalid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<deepmap_core::Error> for ApiError {
    fn from(e: deepmap_core::Error) -> Self {
        Self {
            kind: ErrorKind::from(&e),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub spec: SyntheticSpec,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub csv: PathBuf,
    pub key_columns: Vec<String>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub path: PathBuf,
    pub rows: u64,
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub fixed_width_bytes: u64,
    pub fingerprint: String,
    /// Measured key/code correlation per column, for generated data.
    pub pearson: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRequest {
    pub data: PathBuf,
    pub repr: Repr,
    #[serde(default)]
    pub options: BuildOptions,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSummary {
    pub path: PathBuf,
    pub label: String,
    pub rows: u64,
    pub storage: StorageBreakdown,
    pub ratio: f64,
    pub memorization_fraction: Option<f64>,
    pub arch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub data: PathBuf,
    pub space: SearchSpace,
    pub config: SearchConfig,
    /// Hybrid flavor to build from the winning net.
    pub repr: Repr,
    #[serde(default)]
    pub options: BuildOptions,
    pub out: PathBuf,
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub store: StoreSummary,
    pub arch: String,
    pub best_loss: f64,
    pub final_loss: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub controller: String,
    pub trace: Vec<TraceRow>,
}

/// Rows in their original form: named columns, values as text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rows {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeySource {
    /// Key columns only.
    Explicit(Rows),
    /// `count` keys drawn from the stored keys, with replacement.
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub store: PathBuf,
    pub keys: KeySource,
    /// Source relation to check every answer against.
    pub verify_against: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub keys: Vec<Vec<i64>>,
    /// `None` for absent keys.
    pub values: Vec<Option<Vec<String>>>,
    pub stats: LookupStats,
    /// Set when `verify_against` was given; a mismatch is an error instead.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutateRequest {
    pub store: PathBuf,
    /// Key columns, plus every value column for insert and update.
    pub rows: Rows,
    /// Retrain once the modified bytes cross the store's threshold.
    pub retrain: Option<RetrainStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactRequest {
    pub store: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationSummary {
    pub rows_affected: usize,
    pub rows_total: u64,
    pub modified_bytes: u64,
    pub retrained: bool,
    pub storage: StorageBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub store: PathBuf,
    pub data: PathBuf,
    pub workload: WorkloadSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub reports: Vec<Report>,
}
