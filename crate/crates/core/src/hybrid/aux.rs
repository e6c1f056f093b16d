use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crate::cache::PartitionCache;
use crate::codec::Codec;
use crate::encoding::row_width;
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::store::{row_key, row_values, search_rows, BlobSource, LookupStats};

pub const OVERLAY_MAGIC: &[u8; 4] = b"DMOV";
pub const OVERLAY_VERSION: u16 = 1;
const OVERLAY_HEADER: u64 = 8;
const OP_PUT: u8 = 1;
const OP_TOMBSTONE: u8 = 2;

#[derive(Debug, Clone)]
pub struct SealedPartition {
    /// Unique within the owning table; changes whenever contents change.
    pub id: u64,
    pub min_key: u64,
    pub max_key: u64,
    pub count: u64,
    pub blob: BlobSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OverlayEntry {
    Put(Vec<u32>),
    /// Shadows a sealed entry for the key.
    Tombstone,
}

/// Sorted, partitioned, compressed misclassified rows plus a mutable overlay.
#[derive(Debug, Clone)]
pub struct AuxTable {
    pub codec: Codec,
    pub n_values: usize,
    pub entries_per_partition: usize,
    pub sealed: Vec<SealedPartition>,
    pub overlay: BTreeMap<u64, OverlayEntry>,
    pub next_id: u64,
}

/// Outcome of probing the table for one key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Probe {
    Hit(Vec<u32>),
    /// Overlay tombstone: the sealed entry, if any, is dead.
    Shadowed,
    Miss,
}

impl AuxTable {
    pub fn empty(codec: Codec, n_values: usize, partition_target_bytes: u64) -> Self {
        let width = row_width(n_values) as u64;
        Self {
            codec: codec.for_rows(n_values),
            n_values,
            entries_per_partition: (partition_target_bytes / width).max(1) as usize,
            sealed: Vec::new(),
            overlay: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Seals key-sorted fixed-width `rows` into equal partitions by entry count.
    pub fn seal(&mut self, rows: &[u8]) -> Result<()> {
        self.sealed = self.seal_rows(rows)?;
        Ok(())
    }

    fn seal_rows(&mut self, rows: &[u8]) -> Result<Vec<SealedPartition>> {
        let width = row_width(self.n_values);
        debug_assert_eq!(rows.len() % width, 0);
        let mut parts = Vec::new();
        for chunk in rows.chunks(self.entries_per_partition * width) {
            let count = chunk.len() / width;
            parts.push(SealedPartition {
                id: self.next_id,
                min_key: row_key(chunk, width, 0),
                max_key: row_key(chunk, width, count - 1),
                count: count as u64,
                blob: BlobSource::memory(self.codec.compress(chunk)?),
            });
            self.next_id += 1;
        }
        Ok(parts)
    }

    pub fn width(&self) -> usize {
        row_width(self.n_values)
    }

    pub fn sealed_bytes(&self) -> u64 {
        self.sealed.iter().map(|p| p.blob.len()).sum()
    }

    pub fn sealed_entries(&self) -> u64 {
        self.sealed.iter().map(|p| p.count).sum()
    }

    pub fn overlay_size(&self) -> u64 {
        let put = 9 + 4 * self.n_values as u64;
        OVERLAY_HEADER
            + self
                .overlay
                .values()
                .map(|e| match e {
                    OverlayEntry::Put(_) => put,
                    OverlayEntry::Tombstone => 9,
                })
                .sum::<u64>()
    }

    pub fn serialized_size(&self) -> u64 {
        self.sealed_bytes() + self.overlay_size()
    }

    /// Index of the sealed partition whose range covers `key`.
    pub fn partition_of(&self, key: u64) -> Option<usize> {
        let i = self.sealed.partition_point(|p| p.max_key < key);
        (i < self.sealed.len() && self.sealed[i].min_key <= key).then_some(i)
    }

    /// Decompressed rows of partition `i`, through the cache.
    pub fn load(
        &self,
        store_id: u64,
        i: usize,
        cache: &PartitionCache,
        stats: &mut LookupStats,
    ) -> Result<Arc<Vec<u8>>> {
        let part = &self.sealed[i];
        stats.partitions_touched += 1;
        cache.get_or_load((store_id, part.id), || {
            let t0 = Instant::now();
            let blob = part.blob.read()?;
            let t1 = Instant::now();
            let rows = self.codec.decompress(&blob)?;
            stats.aux_load_ns += (t1 - t0).as_nanos() as u64;
            stats.decompress_ns += t1.elapsed().as_nanos() as u64;
            stats.partitions_decompressed += 1;
            stats.bytes_decompressed += rows.len() as u64;
            if rows.len() as u64 != part.count * self.width() as u64 {
                return Err(Error::Codec(format!("partition {} has wrong length", part.id)));
            }
            let n = rows.len() as u64;
            Ok((rows, n))
        })
    }

    /// Probes ascending `keys`; each partition is loaded at most once.
    pub fn probe_sorted(
        &self,
        store_id: u64,
        keys: &[u64],
        cache: &PartitionCache,
        stats: &mut LookupStats,
    ) -> Result<Vec<Probe>> {
        debug_assert!(keys.windows(2).all(|w| w[0] <= w[1]));
        let width = self.width();
        let mut out = Vec::with_capacity(keys.len());
        let mut current: Option<(usize, Arc<Vec<u8>>)> = None;
        for &k in keys {
            if let Some(e) = self.overlay.get(&k) {
                out.push(match e {
                    OverlayEntry::Put(v) => Probe::Hit(v.clone()),
                    OverlayEntry::Tombstone => Probe::Shadowed,
                });
                continue;
            }
            let Some(p) = self.partition_of(k) else {
                out.push(Probe::Miss);
                continue;
            };
            if current.as_ref().map(|c| c.0) != Some(p) {
                current = Some((p, self.load(store_id, p, cache, stats)?));
            }
            let rows = &current.as_ref().expect("loaded").1;
            let t = Instant::now();
            let found = search_rows(rows, width, k);
            stats.search_ns += t.elapsed().as_nanos() as u64;
            out.push(match found {
                Some(i) => Probe::Hit(row_values(rows, width, i)),
                None => Probe::Miss,
            });
        }
        Ok(out)
    }

    /// Whether a sealed partition holds `key`, ignoring the overlay.
    pub fn sealed_contains(&self, store_id: u64, key: u64, cache: &PartitionCache) -> Result<bool> {
        let Some(p) = self.partition_of(key) else {
            return Ok(false);
        };
        let rows = self.load(store_id, p, cache, &mut LookupStats::default())?;
        Ok(search_rows(&rows, self.width(), key).is_some())
    }

    /// Makes the aux answer for `key` equal `value`; `None` means the model
    /// answers, so any sealed entry is shadowed by a tombstone.
    pub fn assign(&mut self, store_id: u64, key: u64, value: Option<Vec<u32>>, cache: &PartitionCache) -> Result<()> {
        match value {
            Some(v) => {
                self.overlay.insert(key, OverlayEntry::Put(v));
            }
            None => {
                if self.sealed_contains(store_id, key, cache)? {
                    self.overlay.insert(key, OverlayEntry::Tombstone);
                } else {
                    self.overlay.remove(&key);
                }
            }
        }
        Ok(())
    }

    /// Live entries: sealed rows merged with the overlay, ascending by key.
    pub fn merged_rows(&self, store_id: u64, cache: &PartitionCache) -> Result<Vec<u8>> {
        let width = self.width();
        let mut out = Vec::with_capacity(self.sealed_entries() as usize * width);
        let mut overlay = self.overlay.iter().peekable();
        let emit_overlay = |out: &mut Vec<u8>, k: u64, e: &OverlayEntry| {
            if let OverlayEntry::Put(v) = e {
                crate::store::push_row(out, k, v);
            }
        };
        for i in 0..self.sealed.len() {
            let rows = self.load(store_id, i, cache, &mut LookupStats::default())?;
            for r in 0..rows.len() / width {
                let k = row_key(&rows, width, r);
                while let Some((&ok, e)) = overlay.peek() {
                    if ok >= k {
                        break;
                    }
                    emit_overlay(&mut out, ok, e);
                    overlay.next();
                }
                if overlay.peek().is_some_and(|(&ok, _)| ok == k) {
                    let (&ok, e) = overlay.next().expect("peeked");
                    emit_overlay(&mut out, ok, e);
                } else {
                    out.extend_from_slice(&rows[r * width..(r + 1) * width]);
                }
            }
        }
        for (&k, e) in overlay {
            emit_overlay(&mut out, k, e);
        }
        Ok(out)
    }

    /// Folds the overlay into freshly sealed partitions. A no-op on an empty
    /// overlay, so sealed blobs stay byte-identical.
    pub fn compact(&mut self, store_id: u64, cache: &PartitionCache) -> Result<()> {
        if self.overlay.is_empty() {
            return Ok(());
        }
        let rows = self.merged_rows(store_id, cache)?;
        self.sealed = self.seal_rows(&rows)?;
        self.overlay.clear();
        Ok(())
    }

    /// Framed overlay log: magic, u16 version, u16 value count, then per
    /// entry u8 op, u64 key and, for puts, one u32 per value column.
    pub fn overlay_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(self.overlay_size() as usize);
        w.bytes(OVERLAY_MAGIC);
        w.u16(OVERLAY_VERSION);
        w.u16(self.n_values as u16);
        for (&k, e) in &self.overlay {
            match e {
                OverlayEntry::Put(v) => {
                    w.u8(OP_PUT);
                    w.u64(k);
                    for &c in v {
                        w.u32(c);
                    }
                }
                OverlayEntry::Tombstone => {
                    w.u8(OP_TOMBSTONE);
                    w.u64(k);
                }
            }
        }
        w.into_inner()
    }

    /// Replays a framed log; later records for a key win.
    pub fn parse_overlay(bytes: &[u8], n_values: usize) -> Result<BTreeMap<u64, OverlayEntry>> {
        let bad = |e: Error| Error::CorruptManifest(format!("overlay log: {e}"));
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(bad)? != OVERLAY_MAGIC {
            return Err(Error::CorruptManifest("overlay log: bad magic".into()));
        }
        let version = r.u16().map_err(bad)?;
        let m = r.u16().map_err(bad)? as usize;
        if version != OVERLAY_VERSION || m != n_values {
            return Err(Error::CorruptManifest(format!(
                "overlay log: version {version} with {m} values, expected {OVERLAY_VERSION} with {n_values}"
            )));
        }
        let mut map = BTreeMap::new();
        while r.remaining() > 0 {
            let op = r.u8().map_err(bad)?;
            let k = r.u64().map_err(bad)?;
            let entry = match op {
                OP_PUT => OverlayEntry::Put((0..m).map(|_| r.u32()).collect::<Result<_>>().map_err(bad)?),
                OP_TOMBSTONE => OverlayEntry::Tombstone,
                _ => return Err(Error::CorruptManifest(format!("overlay log: unknown op {op}"))),
            };
            map.insert(k, entry);
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecId;
    use crate::store::push_row;

    fn rows(keys: impl Iterator<Item = u64>) -> Vec<u8> {
        let mut out = Vec::new();
        for k in keys {
            push_row(&mut out, k, &[(k % 5) as u32]);
        }
        out
    }

    fn table(n: u64, per: u64) -> AuxTable {
        let mut t = AuxTable::empty(Codec::new(CodecId::Zstd), 1, per * 12);
        t.seal(&rows((0..n).map(|k| k * 2))).unwrap();
        t
    }

    #[test]
    fn partitions_are_equal_by_count() {
        let t = table(2500, 1000);
        let counts: Vec<u64> = t.sealed.iter().map(|p| p.count).collect();
        assert_eq!(counts, vec![1000, 1000, 500]);
        for w in t.sealed.windows(2) {
            assert!(w[0].max_key < w[1].min_key);
        }
    }

    #[test]
    fn probe_loads_each_partition_once() {
        let t = table(2500, 1000);
        let cache = PartitionCache::new(0);
        let keys: Vec<u64> = (0..5000).collect();
        let mut stats = LookupStats::default();
        let out = t.probe_sorted(7, &keys, &cache, &mut stats).unwrap();
        assert_eq!(stats.partitions_decompressed, 3);
        assert_eq!(out[4], Probe::Hit(vec![4]));
        assert_eq!(out[5], Probe::Miss);
    }

    #[test]
    fn overlay_shadows_and_compacts() {
        let mut t = table(100, 30);
        let cache = PartitionCache::unbounded();
        t.assign(1, 4, None, &cache).unwrap();
        t.assign(1, 5, None, &cache).unwrap();
        t.assign(1, 7, Some(vec![9]), &cache).unwrap();
        assert_eq!(t.overlay.get(&4), Some(&OverlayEntry::Tombstone));
        assert!(!t.overlay.contains_key(&5));
        let before = t.sealed_bytes();
        assert_eq!(t.overlay_size(), 8 + 9 + 13);
        assert_eq!(t.overlay_bytes().len() as u64, t.overlay_size());
        let parsed = AuxTable::parse_overlay(&t.overlay_bytes(), 1).unwrap();
        assert_eq!(parsed, t.overlay);
        assert_eq!(t.sealed_bytes(), before);
        t.compact(1, &cache).unwrap();
        assert!(t.overlay.is_empty());
        assert_eq!(t.sealed_entries(), 100);
        let mut stats = LookupStats::default();
        let got = t.probe_sorted(1, &[4, 6, 7], &cache, &mut stats).unwrap();
        assert_eq!(got, vec![Probe::Miss, Probe::Hit(vec![1]), Probe::Hit(vec![9])]);
    }

    #[test]
    fn empty_overlay_compaction_keeps_blobs() {
        let mut t = table(100, 30);
        let ids: Vec<u64> = t.sealed.iter().map(|p| p.id).collect();
        t.compact(1, &PartitionCache::unbounded()).unwrap();
        assert_eq!(t.sealed.iter().map(|p| p.id).collect::<Vec<_>>(), ids);
    }

    #[test]
    fn all_tombstones_drop_every_partition() {
        let mut t = table(50, 20);
        let cache = PartitionCache::unbounded();
        for k in 0..50 {
            t.assign(1, k * 2, None, &cache).unwrap();
        }
        t.compact(1, &cache).unwrap();
        assert!(t.sealed.is_empty());
        assert_eq!(t.serialized_size(), 8);
    }
}
