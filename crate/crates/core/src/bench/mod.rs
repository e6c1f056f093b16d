//! Synthetic relations, CSV ingestion, oracle-checked workloads, and the
//! comparison table across representations.

mod compare;
mod generate;
mod workload;

pub use compare::{compare, Comparison, ComparisonRow};
pub use generate::{generate, ingest_csv, pearson, ColumnSpec, CorrMode, Generated, SyntheticSpec};
pub use workload::{run_workload, workload_batches, Latency, Report, WorkloadSpec, CACHE_POLICY};
