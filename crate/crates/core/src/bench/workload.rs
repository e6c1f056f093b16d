use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::PartitionCache;
use crate::encoding::{decode_predictions, EncodedRelation};
use crate::error::{Error, Result};
use crate::store::{Answer, LookupStats, StorageBreakdown, Store};

pub const CACHE_POLICY: &str = "cache cleared between repeats";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub batch_size: usize,
    pub batches: usize,
    pub repeats: usize,
    /// Fraction of queried keys guaranteed absent from the relation.
    pub absent_fraction: f64,
    /// Budget on decompressed partition bytes held by the cache.
    pub memory_budget_bytes: u64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            batches: 10,
            repeats: 5,
            absent_fraction: 0.0,
            memory_budget_bytes: 64 << 20,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("repeats and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.absent_fraction) {
            return Err(Error::InvalidConfig("absent_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean nanoseconds per batch. `other_ns` is the unattributed remainder, so
/// the components always sum to `total_ns`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub inference_ns: f64,
    pub existence_ns: f64,
    pub aux_load_ns: f64,
    pub decompress_ns: f64,
    pub search_ns: f64,
    pub rebuild_ns: f64,
    pub decode_ns: f64,
    pub other_ns: f64,
    pub total_ns: f64,
}

impl Latency {
    fn mean(total: &LookupStats, batches: f64) -> Self {
        let m = |v: u64| v as f64 / batches;
        let component = total.component_ns();
        Self {
            inference_ns: m(total.inference_ns),
            existence_ns: m(total.existence_ns),
            aux_load_ns: m(total.aux_load_ns),
            decompress_ns: m(total.decompress_ns),
            search_ns: m(total.search_ns),
            rebuild_ns: m(total.rebuild_ns),
            decode_ns: m(total.decode_ns),
            other_ns: m(total.total_ns.saturating_sub(component)),
            total_ns: m(total.total_ns.max(component)),
        }
    }

    pub fn component_sum(&self) -> f64 {
        self.inference_ns
            + self.existence_ns
            + self.aux_load_ns
            + self.decompress_ns
            + self.search_ns
            + self.rebuild_ns
            + self.decode_ns
            + self.other_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    /// Fingerprint of the relation the store was built from.
    pub relation: String,
    pub rows: u64,
    pub storage: StorageBreakdown,
    pub ratio: f64,
    pub workload: WorkloadSpec,
    pub latency: Latency,
    /// Mean milliseconds of each batch over the repeats.
    pub batch_ms: Vec<f64>,
    /// Per repeat; every repeat starts from an empty cache.
    pub bytes_decompressed: u64,
    pub partitions_decompressed: u64,
    pub peak_resident_bytes: u64,
    pub memorization_fraction: Option<f64>,
    /// SHA-256 over every (key, answer) of one repeat.
    pub answer_digest: String,
    pub cache_policy: String,
    pub notes: Vec<String>,
}

struct Oracle<'a> {
    data: &'a EncodedRelation,
    row_of: HashMap<u64, usize>,
}

impl<'a> Oracle<'a> {
    fn new(data: &'a EncodedRelation) -> Self {
        Self {
            data,
            row_of: data.keys.iter().enumerate().map(|(i, &k)| (k, i)).collect(),
        }
    }

    fn answer(&self, key: u64) -> Answer {
        self.row_of.get(&key).map(|&i| self.data.row_codes(i))
    }

    fn check(&self, keys: &[u64], answers: &[Answer]) -> Result<()> {
        if keys.len() != answers.len() {
            return Err(Error::AnswerMismatch {
                key: keys.first().copied().unwrap_or(0),
                expected: format!("{} answers", keys.len()),
                actual: format!("{} answers", answers.len()),
            });
        }
        for (&k, got) in keys.iter().zip(answers) {
            let want = self.answer(k);
            if &want != got {
                return Err(Error::AnswerMismatch {
                    key: k,
                    expected: format!("{want:?}"),
                    actual: format!("{got:?}"),
                });
            }
        }
        Ok(())
    }
}

/// Batches of keys: present keys drawn uniformly from the relation, absent
/// keys drawn until they miss it.
pub fn workload_batches(data: &EncodedRelation, spec: &WorkloadSpec) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let present: std::collections::HashSet<u64> = data.keys.iter().copied().collect();
    let bound = data.key_codec.total_span().saturating_add(data.len().max(1) as u64);
    (0..spec.batches)
        .map(|_| {
            (0..spec.batch_size)
                .map(|_| {
                    if data.is_empty() || rng.gen_bool(spec.absent_fraction) {
                        loop {
                            let k = rng.gen_range(0..bound);
                            if !present.contains(&k) {
                                break k;
                            }
                        }
                    } else {
                        data.keys[rng.gen_range(0..data.len())]
                    }
                })
                .collect()
        })
        .collect()
}

/// Replays the workload against `store`. Every answer is checked against
/// `data` before any timing is recorded; a mismatch aborts the run.
pub fn run_workload(store: &dyn Store, data: &EncodedRelation, spec: &WorkloadSpec) -> Result<Report> {
    spec.validate()?;
    let oracle = Oracle::new(data);
    let batches = workload_batches(data, spec);
    let mut total = LookupStats::default();
    let mut batch_ns = vec![0u64; batches.len()];
    let mut peak = 0;
    let mut digest = Sha256::new();
    for repeat in 0..spec.repeats {
        let cache = PartitionCache::new(spec.memory_budget_bytes);
        for (b, keys) in batches.iter().enumerate() {
            let (answers, mut stats) = store.lookup_codes(keys, &cache)?;
            oracle.check(keys, &answers)?;
            let t = Instant::now();
            decode_predictions(&answers, store.decode_map())?;
            stats.decode_ns = t.elapsed().as_nanos() as u64;
            stats.total_ns += stats.decode_ns;
            if repeat == 0 {
                for (k, a) in keys.iter().zip(&answers) {
                    digest.update(k.to_le_bytes());
                    match a {
                        None => digest.update([0u8]),
                        Some(codes) => {
                            digest.update([1u8]);
                            codes.iter().for_each(|c| digest.update(c.to_le_bytes()));
                        }
                    }
                }
            }
            batch_ns[b] += stats.total_ns;
            total.add(&stats);
        }
        let cs = cache.stats();
        peak = peak.max(cs.peak_resident_bytes);
    }
    let runs = (spec.repeats * batches.len()).max(1) as f64;
    let storage = store.storage();
    let mut notes = vec![CACHE_POLICY.to_owned()];
    if store.label().starts_with("hb") {
        notes.push("hash partition = key mod partition count".to_owned());
    }
    Ok(Report {
        label: store.label(),
        relation: data.fingerprint(),
        rows: store.row_count(),
        ratio: storage.ratio(),
        storage,
        workload: spec.clone(),
        latency: Latency::mean(&total, runs),
        batch_ms: batch_ns
            .iter()
            .map(|&ns| ns as f64 / spec.repeats as f64 / 1e6)
            .collect(),
        bytes_decompressed: total.bytes_decompressed / spec.repeats as u64,
        partitions_decompressed: total.partitions_decompressed / spec.repeats as u64,
        peak_resident_bytes: peak,
        memorization_fraction: store.memorization(),
        answer_digest: digest.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        cache_policy: CACHE_POLICY.to_owned(),
        notes,
    })
}
