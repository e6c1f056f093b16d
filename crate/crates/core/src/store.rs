//! Pieces shared by the hybrid mapping and the baselines: the lookup
//! contract, latency and storage breakdowns, lazily loaded partition blobs,
//! fixed-width row search, and the canonical key=value text format.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::PartitionCache;
use crate::encoding::{DecodeMap, KeyCodec};
use crate::error::{Error, Result};
use crate::io::{read_u32_le, read_u64_le};

/// Codes per value column, or `None` for an absent key.
pub type Answer = Option<Vec<u32>>;

/// Per-batch latency breakdown in nanoseconds plus partition counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupStats {
    pub inference_ns: u64,
    pub existence_ns: u64,
    pub aux_load_ns: u64,
    pub decompress_ns: u64,
    pub search_ns: u64,
    /// Rebuilding hash maps from decompressed partitions.
    pub rebuild_ns: u64,
    pub decode_ns: u64,
    pub total_ns: u64,
    pub partitions_touched: u64,
    pub partitions_decompressed: u64,
    pub bytes_decompressed: u64,
}

impl LookupStats {
    pub fn add(&mut self, o: &LookupStats) {
        self.inference_ns += o.inference_ns;
        self.existence_ns += o.existence_ns;
        self.aux_load_ns += o.aux_load_ns;
        self.decompress_ns += o.decompress_ns;
        self.search_ns += o.search_ns;
        self.rebuild_ns += o.rebuild_ns;
        self.decode_ns += o.decode_ns;
        self.total_ns += o.total_ns;
        self.partitions_touched += o.partitions_touched;
        self.partitions_decompressed += o.partitions_decompressed;
        self.bytes_decompressed += o.bytes_decompressed;
    }

    pub fn component_ns(&self) -> u64 {
        self.inference_ns
            + self.existence_ns
            + self.aux_load_ns
            + self.decompress_ns
            + self.search_ns
            + self.rebuild_ns
            + self.decode_ns
    }
}

/// Exact serialized bytes per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageBreakdown {
    pub model: u64,
    pub aux: u64,
    pub exist: u64,
    pub decode: u64,
    /// Baseline partition payload.
    pub data: u64,
    /// Baseline range index or partition table.
    pub index: u64,
    pub total: u64,
    /// Uncompressed fixed-width array bytes of the relation.
    pub original: u64,
}

impl StorageBreakdown {
    pub fn with_total(mut self) -> Self {
        self.total = self.model + self.aux + self.exist + self.decode + self.data + self.index;
        self
    }

    pub fn ratio(&self) -> f64 {
        if self.original == 0 {
            0.0
        } else {
            self.total as f64 / self.original as f64
        }
    }
}

/// Anything that answers the exact batch lookup contract.
pub trait Store: Send + Sync {
    fn label(&self) -> String;
    fn store_id(&self) -> u64;
    fn key_codec(&self) -> &KeyCodec;
    fn decode_map(&self) -> &DecodeMap;
    /// Answers in input order.
    fn lookup_codes(&self, keys: &[u64], cache: &PartitionCache) -> Result<(Vec<Answer>, LookupStats)>;
    fn storage(&self) -> StorageBreakdown;
    fn persist(&self, dir: &Path) -> Result<()>;
    /// Number of keys currently stored.
    fn row_count(&self) -> u64;
    /// Sorted encoded keys currently stored.
    fn keys(&self, cache: &PartitionCache) -> Result<Vec<u64>>;
    /// Fraction of rows a learned model answers alone, if there is one.
    fn memorization(&self) -> Option<f64> {
        None
    }

    /// Lookup followed by decoding to original values.
    fn lookup_values(&self, keys: &[u64], cache: &PartitionCache) -> Result<(Vec<Option<Vec<String>>>, LookupStats)> {
        let (codes, mut stats) = self.lookup_codes(keys, cache)?;
        let t = Instant::now();
        let values = crate::encoding::decode_predictions(&codes, self.decode_map())?;
        stats.decode_ns = t.elapsed().as_nanos() as u64;
        stats.total_ns += stats.decode_ns;
        Ok((values, stats))
    }
}

/// Sealed partition bytes, held in memory or fetched from disk on demand.
#[derive(Debug, Clone)]
pub enum BlobSource {
    Memory(Arc<Vec<u8>>),
    File { path: PathBuf, len: u64 },
}

impl BlobSource {
    pub fn memory(bytes: Vec<u8>) -> Self {
        BlobSource::Memory(Arc::new(bytes))
    }

    pub fn len(&self) -> u64 {
        match self {
            BlobSource::Memory(b) => b.len() as u64,
            BlobSource::File { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read(&self) -> Result<Cow<'_, [u8]>> {
        match self {
            BlobSource::Memory(b) => Ok(Cow::Borrowed(b.as_slice())),
            BlobSource::File { path, .. } => read_component(path).map(Cow::Owned),
        }
    }
}

/// Reads a component file, mapping a missing file to `MissingComponent`.
pub fn read_component(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingComponent(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })
}

/// Writes `source` to `dest` unless it already lives there.
pub fn write_blob(source: &BlobSource, dest: &Path) -> Result<()> {
    if let BlobSource::File { path, .. } = source {
        if path == dest || same_file(path, dest) {
            return Ok(());
        }
    }
    std::fs::write(dest, source.read()?)?;
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

pub fn partition_file_name(index: usize, ext: &str) -> String {
    format!("part-{index:05}.{ext}")
}

/// Index of `key` in sorted fixed-width rows of `width` bytes.
pub fn search_rows(rows: &[u8], width: usize, key: u64) -> Option<usize> {
    let n = rows.len() / width;
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        let k = read_u64_le(rows, mid * width);
        match k.cmp(&key) {
            std::cmp::Ordering::Less => lo = mid + 1,
            std::cmp::Ordering::Greater => hi = mid,
            std::cmp::Ordering::Equal => return Some(mid),
        }
    }
    None
}

pub fn row_key(rows: &[u8], width: usize, index: usize) -> u64 {
    read_u64_le(rows, index * width)
}

pub fn row_values(rows: &[u8], width: usize, index: usize) -> Vec<u32> {
    let base = index * width;
    (0..(width - 8) / 4)
        .map(|j| read_u32_le(rows, base + 8 + 4 * j))
        .collect()
}

pub fn push_row(out: &mut Vec<u8>, key: u64, codes: &[u32]) {
    out.extend_from_slice(&key.to_le_bytes());
    for c in codes {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

/// Canonical `key=value` text: one pair per line, keys sorted, `#` comments
/// and blank lines ignored on parse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvText {
    pub entries: BTreeMap<String, String>,
}

impl KvText {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Typed lookup; a missing or malformed entry is a `CorruptManifest`.
    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .entries
            .get(key)
            .ok_or_else(|| Error::CorruptManifest(format!("missing `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::CorruptManifest(format!("bad value for `{key}`: {raw}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_search_agrees_with_scan() {
        let width = 12;
        let mut rows = Vec::new();
        let keys: Vec<u64> = (0..300).map(|i| i * 7 + (i % 3)).collect();
        for (i, &k) in keys.iter().enumerate() {
            push_row(&mut rows, k, &[i as u32]);
        }
        for probe in 0..2200u64 {
            let scan = keys.iter().position(|&k| k == probe);
            assert_eq!(search_rows(&rows, width, probe), scan, "key {probe}");
        }
        assert_eq!(search_rows(&[], width, 0), None);
        assert_eq!(row_values(&rows, width, 5), vec![5]);
        assert_eq!(row_key(&rows, width, 5), keys[5]);
    }

    #[test]
    fn kv_text_round_trip() {
        let mut kv = KvText::default();
        kv.set("b", 2);
        kv.set("a", "x y");
        let text = kv.render();
        assert_eq!(text, "a=x y\nb=2\n");
        let back = KvText::parse(&format!("# c\n\n{text}")).unwrap();
        assert_eq!(back, kv);
        assert_eq!(back.require::<u32>("b").unwrap(), 2);
        assert!(matches!(back.require::<u32>("a"), Err(Error::CorruptManifest(_))));
        assert!(matches!(back.require::<u32>("z"), Err(Error::CorruptManifest(_))));
        assert!(KvText::parse("novalue").is_err());
    }

    #[test]
    fn missing_file_is_missing_component() {
        let src = BlobSource::File {
            path: PathBuf::from("/nonexistent/part-00000.zst"),
            len: 3,
        };
        assert!(matches!(src.read(), Err(Error::MissingComponent(_))));
    }
}
