use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use super::array::{array_label, base_manifest, read_decode, read_manifest};
use super::load_partition;
use crate::cache::{next_store_id, PartitionCache};
use crate::codec::Codec;
use crate::encoding::{row_width, DecodeMap, EncodedRelation, KeyCodec};
use crate::error::{Error, Result};
use crate::hybrid::persist::{read_key_codec, remove_stale_partitions};
use crate::store::{
    partition_file_name, push_row, read_component, row_key, row_values, write_blob, Answer, BlobSource, KvText,
    LookupStats, StorageBreakdown, Store,
};

pub const HASH_FORMAT: &str = "deepmap-hash";

/// One serialized partition: key-sorted rows, rebuilt into a map on load.
#[derive(Debug, Clone)]
pub struct HashPartition {
    pub count: u64,
    pub blob: BlobSource,
}

/// Rows of key `k` live in partition `k mod partition_count`.
#[derive(Debug, Clone)]
pub struct HashRep {
    store_id: u64,
    key_codec: KeyCodec,
    decode: DecodeMap,
    codec: Codec,
    pub partitions: Vec<HashPartition>,
    rows: u64,
    original_bytes: u64,
}

/// A loaded partition: the map points into `rows`.
struct Resident {
    rows: Vec<u8>,
    map: HashMap<u64, usize>,
}

/// Partitions needed to keep each near `partition_bytes` before compression.
pub fn partition_count_for(rows: usize, n_values: usize, partition_bytes: u64) -> usize {
    let total = rows as u64 * row_width(n_values) as u64;
    total.div_ceil(partition_bytes.max(1)).max(1) as usize
}

pub fn build_hash(data: &EncodedRelation, codec: Codec, partition_count: usize) -> Result<HashRep> {
    if partition_count == 0 {
        return Err(Error::InvalidConfig("partition_count must be positive".into()));
    }
    let sorted = data.sorted_by_key();
    let codec = codec.for_rows(data.n_values());
    let mut buckets: Vec<Vec<u8>> = vec![Vec::new(); partition_count];
    let mut counts = vec![0u64; partition_count];
    for i in 0..sorted.len() {
        let k = sorted.keys[i];
        let p = (k % partition_count as u64) as usize;
        push_row(&mut buckets[p], k, &sorted.row_codes(i));
        counts[p] += 1;
    }
    let partitions = buckets
        .iter()
        .zip(counts)
        .map(|(rows, count)| {
            Ok(HashPartition {
                count,
                blob: BlobSource::memory(codec.compress(rows)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HashRep {
        store_id: next_store_id(),
        key_codec: data.key_codec.clone(),
        decode: data.decode_map(),
        codec,
        partitions,
        rows: data.len() as u64,
        original_bytes: data.fixed_width_bytes(),
    })
}

impl HashRep {
    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    fn width(&self) -> usize {
        row_width(self.decode.columns.len())
    }

    fn load(&self, p: usize, cache: &PartitionCache, stats: &mut LookupStats) -> Result<Arc<Resident>> {
        let part = &self.partitions[p];
        let width = self.width();
        load_partition(
            cache,
            (self.store_id, p as u64),
            &part.blob,
            &self.codec,
            part.count * width as u64,
            stats,
            |rows| {
                let map = (0..rows.len() / width).map(|r| (row_key(&rows, width, r), r)).collect();
                Resident { rows, map }
            },
        )
    }

    fn index_text(&self) -> String {
        let mut kv = KvText::default();
        let ext = self.codec.id.ext();
        for (i, p) in self.partitions.iter().enumerate() {
            kv.set(
                format!("part.{i:05}"),
                format!("{},{},{}", partition_file_name(i, ext), p.count, p.blob.len()),
            );
        }
        kv.render()
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let kv = read_manifest(dir, HASH_FORMAT)?;
        let key_codec = read_key_codec(&kv)?;
        let n_values: usize = kv.require("values")?;
        let codec = Codec::new(kv.require("codec")?)
            .with_level(kv.require("codec.level")?)
            .for_rows(n_values);
        let decode = read_decode(dir, n_values)?;
        let index = KvText::parse(&String::from_utf8_lossy(&read_component(&dir.join("index"))?))
            .map_err(|e| Error::CorruptManifest(format!("index: {e}")))?;
        let n_parts: usize = kv.require("partitions")?;
        if n_parts == 0 {
            return Err(Error::CorruptManifest("hash store needs a partition".into()));
        }
        let data_dir = dir.join("data");
        let mut partitions = Vec::with_capacity(n_parts);
        for i in 0..n_parts {
            let key = format!("part.{i:05}");
            let line: String = index.require(&key)?;
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::CorruptManifest(format!("bad index entry `{key}`: {line}"));
            if f.len() != 3 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<u64>().map_err(|_| bad());
            partitions.push(HashPartition {
                count: num(1)?,
                blob: BlobSource::File {
                    path: data_dir.join(f[0]),
                    len: num(2)?,
                },
            });
        }
        Ok(Self {
            store_id: next_store_id(),
            key_codec,
            decode,
            codec,
            partitions,
            rows: kv.require("rows")?,
            original_bytes: kv.require("original_bytes")?,
        })
    }
}

impl Store for HashRep {
    fn label(&self) -> String {
        array_label("hb", self.codec.id)
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

    /// Keys are grouped by partition so each loads at most once per batch.
    fn lookup_codes(&self, keys: &[u64], cache: &PartitionCache) -> Result<(Vec<Answer>, LookupStats)> {
        let start = Instant::now();
        let mut stats = LookupStats::default();
        let n = self.partitions.len() as u64;
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_unstable_by_key(|&i| (keys[i] % n, keys[i]));
        let width = self.width();
        let mut answers: Vec<Answer> = vec![None; keys.len()];
        let mut current: Option<(usize, Arc<Resident>)> = None;
        for i in order {
            let p = (keys[i] % n) as usize;
            if self.partitions[p].count == 0 {
                continue;
            }
            if current.as_ref().map(|c| c.0) != Some(p) {
                current = Some((p, self.load(p, cache, &mut stats)?));
            }
            let part = &current.as_ref().expect("loaded").1;
            let t = Instant::now();
            if let Some(&r) = part.map.get(&keys[i]) {
                answers[i] = Some(row_values(&part.rows, width, r));
            }
            stats.search_ns += t.elapsed().as_nanos() as u64;
        }
        stats.total_ns = start.elapsed().as_nanos() as u64;
        Ok((answers, stats))
    }

    fn storage(&self) -> StorageBreakdown {
        StorageBreakdown {
            decode: self.decode.serialized_size(),
            data: self.partitions.iter().map(|p| p.blob.len()).sum(),
            index: self.index_text().len() as u64,
            original: self.original_bytes,
            ..Default::default()
        }
        .with_total()
    }

    fn persist(&self, dir: &Path) -> Result<()> {
        let data_dir = dir.join("data");
        std::fs::create_dir_all(&data_dir)?;
        let ext = self.codec.id.ext();
        for (i, p) in self.partitions.iter().enumerate() {
            write_blob(&p.blob, &data_dir.join(partition_file_name(i, ext)))?;
        }
        remove_stale_partitions(&data_dir, self.partitions.len())?;
        std::fs::write(dir.join("decode.map"), self.decode.to_bytes())?;
        std::fs::write(dir.join("index"), self.index_text())?;
        let mut kv = base_manifest(
            HASH_FORMAT,
            &self.key_codec,
            &self.decode,
            &self.codec,
            self.rows,
            self.original_bytes,
        );
        kv.set("partitions", self.partitions.len());
        kv.set("partitioning", "key mod partitions");
        std::fs::write(dir.join("manifest"), kv.render())?;
        Ok(())
    }

    fn row_count(&self) -> u64 {
        self.rows
    }

    fn keys(&self, cache: &PartitionCache) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(self.rows as usize);
        let mut stats = LookupStats::default();
        for p in 0..self.partitions.len() {
            let part = self.load(p, cache, &mut stats)?;
            out.extend(part.map.keys().copied());
        }
        out.sort_unstable();
        Ok(out)
    }
}
