//! Reference stores: key-sorted array partitions (AB, ABC-*) and key-mod
//! hash partitions (HB, HBC-*), each block-compressed with a pluggable codec.

mod array;
mod hash;

use std::sync::Arc;
use std::time::Instant;

pub use array::{build_array, ArrayPartition, ArrayRep, ARRAY_FORMAT};
pub use hash::{build_hash, partition_count_for, HashPartition, HashRep, HASH_FORMAT};

use crate::bench::{run_workload, Report, WorkloadSpec};
use crate::cache::PartitionCache;
use crate::codec::Codec;
use crate::encoding::EncodedRelation;
use crate::error::{Error, Result};
use crate::store::{BlobSource, LookupStats, Store};

pub const DEFAULT_PARTITION_BYTES: u64 = 128 * 1024;

/// Decompresses one partition through the cache and checks its length.
/// `finish` turns raw rows into the cached value, timed as a rebuild.
pub(crate) fn load_partition<V, F>(
    cache: &PartitionCache,
    key: (u64, u64),
    blob: &BlobSource,
    codec: &Codec,
    expected_len: u64,
    stats: &mut LookupStats,
    finish: F,
) -> Result<Arc<V>>
where
    V: Send + Sync + 'static,
    F: FnOnce(Vec<u8>) -> V,
{
    stats.partitions_touched += 1;
    cache.get_or_load(key, || {
        let t0 = Instant::now();
        let packed = blob.read()?;
        let t1 = Instant::now();
        let rows = codec.decompress(&packed)?;
        let t2 = Instant::now();
        if rows.len() as u64 != expected_len {
            return Err(Error::Codec(format!(
                "partition {} decompressed to {} bytes, expected {expected_len}",
                key.1,
                rows.len()
            )));
        }
        let n = rows.len() as u64;
        let value = finish(rows);
        stats.aux_load_ns += (t1 - t0).as_nanos() as u64;
        stats.decompress_ns += (t2 - t1).as_nanos() as u64;
        stats.rebuild_ns += t2.elapsed().as_nanos() as u64;
        stats.partitions_decompressed += 1;
        stats.bytes_decompressed += n;
        Ok((value, n))
    })
}

/// Latency per candidate and the winner.
#[derive(Debug, Clone)]
pub struct Tuning {
    pub best: u64,
    pub measurements: Vec<(u64, Report)>,
}

/// Builds one store per candidate partition size, replays `workload` on
/// each, and picks the size with the lowest mean batch latency.
pub fn tune_partition_size<F>(
    mut builder: F,
    data: &EncodedRelation,
    workload: &WorkloadSpec,
    candidates: &[u64],
) -> Result<Tuning>
where
    F: FnMut(u64) -> Result<Box<dyn Store>>,
{
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate partition sizes".into()));
    }
    let mut measurements = Vec::with_capacity(candidates.len());
    for &size in candidates {
        let store = builder(size)?;
        let report = run_workload(store.as_ref(), data, workload)?;
        tracing::debug!(size, mean_ns = report.latency.total_ns, "partition size measured");
        measurements.push((size, report));
    }
    let best = measurements
        .iter()
        .min_by(|a, b| a.1.latency.total_ns.total_cmp(&b.1.latency.total_ns))
        .map(|m| m.0)
        .expect("nonempty");
    Ok(Tuning { best, measurements })
}
