//! The hybrid mapping: a multi-task net answers most keys, a compressed
//! table holds the rows it gets wrong, a bit vector rejects absent keys, and
//! the decode map turns codes back into values.

mod aux;
mod exist;
pub(crate) mod persist;

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aux::{AuxTable, OverlayEntry, Probe, SealedPartition, OVERLAY_MAGIC, OVERLAY_VERSION};
pub use exist::ExistenceBitVector;
pub use persist::{FORMAT as HYBRID_FORMAT, FORMAT_VERSION as HYBRID_FORMAT_VERSION};

use crate::cache::{next_store_id, PartitionCache};
use crate::codec::{Codec, CodecId};
use crate::encoding::{row_width, ColumnSchema, DecodeMap, EncodedRelation, KeyCodec};
use crate::error::{Error, Result};
use crate::neural::{train, KeyFeaturizer, MultiTaskNet, TrainConfig, TrainOutcome, DEFAULT_RADIX};
use crate::store::{push_row, Answer, LookupStats, StorageBreakdown, Store};

pub const DEFAULT_PARTITION_BYTES: u64 = 128 * 1024;
pub const DEFAULT_RETRAIN_THRESHOLD: f64 = 0.2;
/// Decompressed-byte budget of the cache used by mutations and sweeps.
const MAINTENANCE_CACHE_BYTES: u64 = 32 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub partition_target_bytes: u64,
    pub codec: CodecId,
    pub codec_level: i32,
    /// Fraction of the original bytes that may be modified before retraining.
    pub retrain_threshold: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            partition_target_bytes: DEFAULT_PARTITION_BYTES,
            codec: CodecId::Zstd,
            codec_level: CodecId::Zstd.default_level(),
            retrain_threshold: DEFAULT_RETRAIN_THRESHOLD,
        }
    }
}

impl HybridConfig {
    pub fn with_codec(mut self, codec: CodecId) -> Self {
        self.codec = codec;
        self.codec_level = codec.default_level();
        self
    }

    fn codec(&self) -> Codec {
        Codec::new(self.codec).with_level(self.codec_level)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub rows_total: u64,
    pub rows_misclassified: u64,
    /// Fraction of rows the model alone answers fully correctly.
    pub memorization_fraction: f64,
}

/// Fixed architecture plus training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecipe {
    pub shared: Vec<usize>,
    pub private: Vec<usize>,
    pub radix: u32,
    pub init_std: f64,
    pub train: TrainConfig,
}

impl Default for ModelRecipe {
    fn default() -> Self {
        Self {
            shared: vec![64],
            private: vec![32],
            radix: DEFAULT_RADIX,
            init_std: 0.05,
            train: TrainConfig::default(),
        }
    }
}

impl ModelRecipe {
    pub fn untrained(&self, data: &EncodedRelation) -> Result<MultiTaskNet> {
        let featurizer = KeyFeaturizer::new(&data.key_codec.spans(), self.radix)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        MultiTaskNet::with_layout(
            featurizer,
            &self.shared,
            &self.private,
            &data.cardinalities(),
            self.init_std,
            &mut rng,
        )
    }

    pub fn fit(&self, data: &EncodedRelation) -> Result<(MultiTaskNet, TrainOutcome)> {
        let mut net = self.untrained(data)?;
        let outcome = train(&mut net, data, &self.train)?;
        Ok((net, outcome))
    }
}

/// How a retrain produces the replacement model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainStrategy {
    Fixed(ModelRecipe),
    Search {
        space: crate::mhas::SearchSpace,
        config: crate::mhas::SearchConfig,
    },
}

impl RetrainStrategy {
    pub fn fit(&self, data: &EncodedRelation) -> Result<(MultiTaskNet, Option<String>)> {
        match self {
            RetrainStrategy::Fixed(recipe) => Ok((recipe.fit(data)?.0, None)),
            RetrainStrategy::Search { space, config } => {
                let out = crate::mhas::mhas_search(data, space, config)?;
                Ok((out.net, Some(out.arch.to_string())))
            }
        }
    }
}

/// True once `modified` bytes reach `threshold` of `original`.
pub fn retrain_due(modified: u64, original: u64, threshold: f64) -> bool {
    modified as f64 >= threshold * original as f64
}

pub struct HybridMapping {
    store_id: u64,
    pub key_codec: KeyCodec,
    pub model: MultiTaskNet,
    pub aux: AuxTable,
    pub exist: ExistenceBitVector,
    pub decode: DecodeMap,
    pub stats: BuildStats,
    pub config: HybridConfig,
    /// Fixed-width bytes of the relation at the last build.
    pub original_bytes: u64,
    /// Raw row bytes touched by insert/delete/update since the last build.
    pub modified_bytes: u64,
    pub retrains: u64,
    /// Architecture found by search, if the model came from one.
    pub arch: Option<String>,
    maintenance: PartitionCache,
}

impl std::fmt::Debug for HybridMapping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridMapping")
            .field("rows", &self.exist.count_ones())
            .field("stats", &self.stats)
            .field("storage", &self.storage())
            .finish()
    }
}

impl HybridMapping {
    /// Runs every key through `net`; rows with any wrong head go to the aux table.
    pub fn build(data: &EncodedRelation, net: MultiTaskNet, config: HybridConfig) -> Result<Self> {
        if net.cardinalities() != data.cardinalities() {
            return Err(Error::DimensionMismatch(format!(
                "net heads {:?} vs relation cardinalities {:?}",
                net.cardinalities(),
                data.cardinalities()
            )));
        }
        let preds = net.predict(&data.keys)?;
        let mut wrong: Vec<usize> = (0..data.len())
            .filter(|&i| preds.iter().zip(&data.columns).any(|(p, c)| p[i] != c[i]))
            .collect();
        wrong.sort_unstable_by_key(|&i| data.keys[i]);
        let mut rows = Vec::with_capacity(wrong.len() * data.row_width());
        for &i in &wrong {
            push_row(&mut rows, data.keys[i], &data.row_codes(i));
        }
        let mut aux = AuxTable::empty(config.codec(), data.n_values(), config.partition_target_bytes);
        aux.seal(&rows)?;
        let n = data.len() as u64;
        let stats = BuildStats {
            rows_total: n,
            rows_misclassified: wrong.len() as u64,
            memorization_fraction: if n == 0 {
                1.0
            } else {
                (n - wrong.len() as u64) as f64 / n as f64
            },
        };
        Ok(Self {
            store_id: next_store_id(),
            key_codec: data.key_codec.clone(),
            model: net,
            aux,
            exist: ExistenceBitVector::from_keys(&data.keys),
            decode: data.decode_map(),
            stats,
            config,
            original_bytes: data.fixed_width_bytes(),
            modified_bytes: 0,
            retrains: 0,
            arch: None,
            maintenance: PartitionCache::new(MAINTENANCE_CACHE_BYTES),
        })
    }

    pub fn n_values(&self) -> usize {
        self.decode.columns.len()
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.decode.columns.iter().map(|(_, d)| d.len() as u32).collect()
    }

    fn predict_rows(&self, keys: &[u64]) -> Result<Vec<Vec<u32>>> {
        let cols = self.model.predict(keys)?;
        Ok((0..keys.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
    }

    /// Exact batch lookup. Absent keys are answered from the bit vector alone
    /// and only keys without an aux answer reach the model.
    pub fn lookup(&self, keys: &[u64], cache: &PartitionCache) -> Result<(Vec<Answer>, LookupStats)> {
        let start = Instant::now();
        let mut stats = LookupStats::default();
        let t = Instant::now();
        let mut present: Vec<u64> = keys.iter().copied().filter(|&k| self.exist.contains(k)).collect();
        stats.existence_ns = t.elapsed().as_nanos() as u64;

        present.sort_unstable();
        present.dedup();
        let probes = self.aux.probe_sorted(self.store_id, &present, cache, &mut stats)?;
        let mut answers: HashMap<u64, Vec<u32>> = HashMap::with_capacity(present.len());
        let mut model_keys = Vec::new();
        for (&k, p) in present.iter().zip(probes) {
            match p {
                Probe::Hit(v) => {
                    answers.insert(k, v);
                }
                Probe::Shadowed | Probe::Miss => model_keys.push(k),
            }
        }

        let t = Instant::now();
        if !model_keys.is_empty() {
            for (k, v) in model_keys.iter().zip(self.predict_rows(&model_keys)?) {
                answers.insert(*k, v);
            }
        }
        stats.inference_ns = t.elapsed().as_nanos() as u64;

        let out = keys.iter().map(|k| answers.get(k).cloned()).collect();
        stats.total_ns = start.elapsed().as_nanos() as u64;
        Ok((out, stats))
    }

    /// All stored pairs with keys in `[lo, hi]`, ascending.
    pub fn range_lookup(&self, lo: u64, hi: u64, cache: &PartitionCache) -> Result<Vec<(u64, Vec<u32>)>> {
        if lo > hi {
            return Err(Error::InvalidRange { lo, hi });
        }
        let keys: Vec<u64> = self.exist.iter_range(lo, hi).collect();
        let (answers, _) = self.lookup(&keys, cache)?;
        Ok(keys
            .into_iter()
            .zip(answers)
            .map(|(k, a)| (k, a.expect("set bit always answers")))
            .collect())
    }

    fn check_codes(&self, codes: &[u32]) -> Result<()> {
        if codes.len() != self.n_values() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, relation has {}",
                codes.len(),
                self.n_values()
            )));
        }
        for (&code, card) in codes.iter().zip(self.cardinalities()) {
            if code >= card {
                return Err(Error::CodeOutOfRange {
                    code,
                    cardinality: card,
                });
            }
        }
        Ok(())
    }

    /// Codes for raw values, extending a column's dictionary with unseen values.
    pub fn intern_values(&mut self, values: &[String]) -> Result<Vec<u32>> {
        if values.len() != self.n_values() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, relation has {}",
                values.len(),
                self.n_values()
            )));
        }
        Ok(values
            .iter()
            .zip(&mut self.decode.columns)
            .map(|(v, (_, dict))| match dict.iter().position(|d| d == v) {
                Some(i) => i as u32,
                None => {
                    dict.push(v.clone());
                    (dict.len() - 1) as u32
                }
            })
            .collect())
    }

    /// Aux entry for `key` given the model's view: stored only if mispredicted.
    fn settle(&mut self, key: u64, codes: Vec<u32>, predicted: &[u32]) -> Result<()> {
        let value = (predicted != codes.as_slice()).then_some(codes);
        self.aux.assign(self.store_id, key, value, &self.maintenance)
    }

    pub fn insert(&mut self, rows: &[(u64, Vec<u32>)]) -> Result<()> {
        let span = self.key_codec.total_span();
        let mut batch = std::collections::HashSet::with_capacity(rows.len());
        for (k, codes) in rows {
            if *k >= span {
                return Err(Error::KeyOutOfDomain(format!("index {k} >= span {span}")));
            }
            if self.exist.contains(*k) || !batch.insert(*k) {
                return Err(Error::KeyAlreadyExists(*k));
            }
            self.check_codes(codes)?;
        }
        let keys: Vec<u64> = rows.iter().map(|r| r.0).collect();
        let preds = self.predict_rows(&keys)?;
        for ((k, codes), pred) in rows.iter().zip(preds) {
            self.exist.set(*k);
            self.settle(*k, codes.clone(), &pred)?;
        }
        self.modified_bytes += (rows.len() * row_width(self.n_values())) as u64;
        Ok(())
    }

    pub fn delete(&mut self, keys: &[u64]) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(keys.len());
        for &k in keys {
            if !self.exist.contains(k) || !seen.insert(k) {
                return Err(Error::KeyNotFound(k));
            }
        }
        for &k in keys {
            self.exist.clear(k);
            self.aux.assign(self.store_id, k, None, &self.maintenance)?;
        }
        self.modified_bytes += (keys.len() * row_width(self.n_values())) as u64;
        Ok(())
    }

    pub fn update(&mut self, rows: &[(u64, Vec<u32>)]) -> Result<()> {
        for (k, codes) in rows {
            if !self.exist.contains(*k) {
                return Err(Error::KeyNotFound(*k));
            }
            self.check_codes(codes)?;
        }
        let keys: Vec<u64> = rows.iter().map(|r| r.0).collect();
        let preds = self.predict_rows(&keys)?;
        for ((k, codes), pred) in rows.iter().zip(preds) {
            self.settle(*k, codes.clone(), &pred)?;
        }
        self.modified_bytes += (rows.len() * row_width(self.n_values())) as u64;
        Ok(())
    }

    pub fn compact(&mut self) -> Result<()> {
        self.aux.compact(self.store_id, &self.maintenance)
    }

    /// The current logical relation, materialized by a full-key sweep.
    pub fn to_relation(&self) -> Result<EncodedRelation> {
        let keys: Vec<u64> = self.exist.iter().collect();
        let mut columns = vec![Vec::with_capacity(keys.len()); self.n_values()];
        for chunk in keys.chunks(1 << 16) {
            let (answers, _) = self.lookup(chunk, &self.maintenance)?;
            for a in answers {
                for (col, c) in columns.iter_mut().zip(a.expect("set bit always answers")) {
                    col.push(c);
                }
            }
        }
        let schemas = self
            .decode
            .columns
            .iter()
            .map(|(name, dict)| ColumnSchema::value(name.clone()).with_dictionary(dict.iter().cloned()))
            .collect::<Result<Vec<_>>>()?;
        EncodedRelation::new(self.key_codec.clone(), schemas, keys, columns)
    }

    /// Rebuilds every component from the current logical relation.
    pub fn retrain(&mut self, strategy: &RetrainStrategy) -> Result<()> {
        let data = self.to_relation()?;
        let (net, arch) = strategy.fit(&data)?;
        let retrains = self.retrains + 1;
        let mut rebuilt = Self::build(&data, net, self.config)?;
        rebuilt.retrains = retrains;
        rebuilt.arch = arch.or_else(|| self.arch.take());
        tracing::info!(
            rows = data.len(),
            memorization = rebuilt.stats.memorization_fraction,
            "hybrid retrained"
        );
        *self = rebuilt;
        Ok(())
    }

    /// Retrains once the modified bytes reach the configured threshold.
    pub fn maybe_retrain(&mut self, strategy: &RetrainStrategy) -> Result<bool> {
        if !retrain_due(self.modified_bytes, self.original_bytes, self.config.retrain_threshold) {
            return Ok(false);
        }
        self.retrain(strategy)?;
        Ok(true)
    }

    pub fn storage(&self) -> StorageBreakdown {
        StorageBreakdown {
            model: self.model.serialized_size(),
            aux: self.aux.serialized_size(),
            exist: self.exist.serialized_size(),
            decode: self.decode.serialized_size(),
            original: self.original_bytes,
            ..Default::default()
        }
        .with_total()
    }

    pub fn total_size(&self) -> u64 {
        self.storage().total
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        persist::save(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        persist::load(dir)
    }
}

impl Store for HybridMapping {
    fn label(&self) -> String {
        match self.aux.codec.id {
            CodecId::Lzma => "dm-l".into(),
            CodecId::Zstd => "dm-z".into(),
            other => format!("dm-{}", other.ext()),
        }
    }

    fn store_id(&self) -> u64 {
        self.store_id
    }

    fn key_codec(&self) -> &KeyCodec {
        &self.key_codec
    }

    fn decode_map(&self) -> &DecodeMap {
        &self.decode
    }

    fn lookup_codes(&self, keys: &[u64], cache: &PartitionCache) -> Result<(Vec<Answer>, LookupStats)> {
        self.lookup(keys, cache)
    }

    fn storage(&self) -> StorageBreakdown {
        HybridMapping::storage(self)
    }

    fn persist(&self, dir: &Path) -> Result<()> {
        self.save(dir)
    }

    fn row_count(&self) -> u64 {
        self.exist.count_ones()
    }

    fn keys(&self, _cache: &PartitionCache) -> Result<Vec<u64>> {
        Ok(self.exist.iter().collect())
    }

    fn memorization(&self) -> Option<f64> {
        Some(self.stats.memorization_fraction)
    }
}

#[cfg(test)]
mod tests;
