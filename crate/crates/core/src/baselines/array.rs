use std::path::Path;
use std::time::Instant;

use super::load_partition;
use crate::cache::{next_store_id, PartitionCache};
use crate::codec::{Codec, CodecId};
use crate::encoding::{DecodeMap, EncodedRelation, KeyCodec};
use crate::error::{Error, Result};
use crate::hybrid::persist::{read_key_codec, remove_stale_partitions, write_key_codec};
use crate::store::{
    partition_file_name, push_row, read_component, row_key, row_values, search_rows, write_blob, Answer, BlobSource,
    KvText, LookupStats, StorageBreakdown, Store,
};

pub const ARRAY_FORMAT: &str = "deepmap-array";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ArrayPartition {
    pub min_key: u64,
    pub max_key: u64,
    pub count: u64,
    pub blob: BlobSource,
}

/// Key-sorted fixed-width rows in compressed partitions of about
/// `partition_bytes` each, located through an uncompressed range index.
#[derive(Debug, Clone)]
pub struct ArrayRep {
    store_id: u64,
    key_codec: KeyCodec,
    decode: DecodeMap,
    codec: Codec,
    partition_bytes: u64,
    pub partitions: Vec<ArrayPartition>,
    rows: u64,
    original_bytes: u64,
}

pub fn build_array(data: &EncodedRelation, codec: Codec, partition_bytes: u64) -> Result<ArrayRep> {
    if partition_bytes == 0 {
        return Err(Error::InvalidConfig("partition_bytes must be positive".into()));
    }
    let sorted = data.sorted_by_key();
    let codec = codec.for_rows(data.n_values());
    let width = data.row_width();
    let per = (partition_bytes / width as u64).max(1) as usize;
    let mut partitions = Vec::with_capacity(sorted.len().div_ceil(per));
    let mut rows = Vec::with_capacity(per * width);
    for start in (0..sorted.len()).step_by(per) {
        let end = (start + per).min(sorted.len());
        rows.clear();
        for i in start..end {
            push_row(&mut rows, sorted.keys[i], &sorted.row_codes(i));
        }
        partitions.push(ArrayPartition {
            min_key: sorted.keys[start],
            max_key: sorted.keys[end - 1],
            count: (end - start) as u64,
            blob: BlobSource::memory(codec.compress(&rows)?),
        });
    }
    Ok(ArrayRep {
        store_id: next_store_id(),
        key_codec: data.key_codec.clone(),
        decode: data.decode_map(),
        codec,
        partition_bytes,
        partitions,
        rows: data.len() as u64,
        original_bytes: data.fixed_width_bytes(),
    })
}

impl ArrayRep {
    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn partition_bytes(&self) -> u64 {
        self.partition_bytes
    }

    fn width(&self) -> usize {
        crate::encoding::row_width(self.decode.columns.len())
    }

    fn partition_of(&self, key: u64) -> Option<usize> {
        let i = self.partitions.partition_point(|p| p.max_key < key);
        (i < self.partitions.len() && self.partitions[i].min_key <= key).then_some(i)
    }

    fn load(&self, i: usize, cache: &PartitionCache, stats: &mut LookupStats) -> Result<std::sync::Arc<Vec<u8>>> {
        let p = &self.partitions[i];
        let expected = p.count * self.width() as u64;
        load_partition(
            cache,
            (self.store_id, i as u64),
            &p.blob,
            &self.codec,
            expected,
            stats,
            |rows| rows,
        )
    }

    /// Every partition decompressed and concatenated.
    pub fn decompress_all(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for p in &self.partitions {
            out.extend_from_slice(&self.codec.decompress(&p.blob.read()?)?);
        }
        Ok(out)
    }

    /// Canonical text of the range index; its length is the index size.
    fn index_text(&self) -> String {
        let mut kv = KvText::default();
        let ext = self.codec.id.ext();
        for (i, p) in self.partitions.iter().enumerate() {
            kv.set(
                format!("part.{i:05}"),
                format!(
                    "{},{},{},{},{}",
                    partition_file_name(i, ext),
                    p.min_key,
                    p.max_key,
                    p.count,
                    p.blob.len()
                ),
            );
        }
        kv.render()
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let kv = read_manifest(dir, ARRAY_FORMAT)?;
        let key_codec = read_key_codec(&kv)?;
        let n_values: usize = kv.require("values")?;
        let codec = Codec::new(kv.require("codec")?)
            .with_level(kv.require("codec.level")?)
            .for_rows(n_values);
        let decode = read_decode(dir, n_values)?;
        let index = KvText::parse(&String::from_utf8_lossy(&read_component(&dir.join("index"))?))
            .map_err(|e| Error::CorruptManifest(format!("index: {e}")))?;
        let n_parts: usize = kv.require("partitions")?;
        let data_dir = dir.join("data");
        let mut partitions = Vec::with_capacity(n_parts);
        for i in 0..n_parts {
            let key = format!("part.{i:05}");
            let line: String = index.require(&key)?;
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::CorruptManifest(format!("bad index entry `{key}`: {line}"));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |j: usize| f[j].parse::<u64>().map_err(|_| bad());
            partitions.push(ArrayPartition {
                min_key: num(1)?,
                max_key: num(2)?,
                count: num(3)?,
                blob: BlobSource::File {
                    path: data_dir.join(f[0]),
                    len: num(4)?,
                },
            });
        }
        Ok(Self {
            store_id: next_store_id(),
            key_codec,
            decode,
            codec,
            partition_bytes: kv.require("partition.bytes")?,
            partitions,
            rows: kv.require("rows")?,
            original_bytes: kv.require("original_bytes")?,
        })
    }
}

pub(super) fn read_manifest(dir: &Path, format: &str) -> Result<KvText> {
    let kv = KvText::parse(&String::from_utf8_lossy(&read_component(&dir.join("manifest"))?))
        .map_err(|e| Error::CorruptManifest(e.to_string()))?;
    if kv.get_str("format") != Some(format) {
        return Err(Error::CorruptManifest(format!("not a {format} manifest")));
    }
    let version: u32 = kv.require("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptManifest(format!("unsupported version {version}")));
    }
    Ok(kv)
}

pub(super) fn read_decode(dir: &Path, n_values: usize) -> Result<DecodeMap> {
    let decode = DecodeMap::from_bytes(&read_component(&dir.join("decode.map"))?)
        .map_err(|e| Error::CorruptManifest(format!("decode.map: {e}")))?;
    if decode.columns.len() != n_values {
        return Err(Error::CorruptManifest(format!(
            "manifest says {n_values} values, decode map has {}",
            decode.columns.len()
        )));
    }
    Ok(decode)
}

/// Manifest fields every baseline writes.
pub(super) fn base_manifest(
    format: &str,
    key_codec: &KeyCodec,
    decode: &DecodeMap,
    codec: &Codec,
    rows: u64,
    original_bytes: u64,
) -> KvText {
    let mut kv = KvText::default();
    kv.set("format", format);
    kv.set("version", FORMAT_VERSION);
    write_key_codec(&mut kv, key_codec);
    kv.set("values", decode.columns.len());
    kv.set("codec", codec.id);
    kv.set("codec.level", codec.level);
    kv.set("rows", rows);
    kv.set("original_bytes", original_bytes);
    kv
}

pub(super) fn array_label(prefix: &str, codec: CodecId) -> String {
    match codec {
        CodecId::None => prefix.to_owned(),
        CodecId::Dictionary => format!("{prefix}c-d"),
        CodecId::Gzip => format!("{prefix}c-g"),
        CodecId::Zstd => format!("{prefix}c-z"),
        CodecId::Lzma => format!("{prefix}c-l"),
    }
}

impl Store for ArrayRep {
    fn label(&self) -> String {
        array_label("ab", self.codec.id)
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

    /// Keys are visited in sorted order, so a batch decompresses each
    /// partition at most once.
    fn lookup_codes(&self, keys: &[u64], cache: &PartitionCache) -> Result<(Vec<Answer>, LookupStats)> {
        let start = Instant::now();
        let mut stats = LookupStats::default();
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_unstable_by_key(|&i| keys[i]);
        let width = self.width();
        let mut answers: Vec<Answer> = vec![None; keys.len()];
        let mut current: Option<(usize, std::sync::Arc<Vec<u8>>)> = None;
        for i in order {
            let Some(p) = self.partition_of(keys[i]) else {
                continue;
            };
            if current.as_ref().map(|c| c.0) != Some(p) {
                current = Some((p, self.load(p, cache, &mut stats)?));
            }
            let rows = &current.as_ref().expect("loaded").1;
            let t = Instant::now();
            if let Some(r) = search_rows(rows, width, keys[i]) {
                answers[i] = Some(row_values(rows, width, r));
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
            ARRAY_FORMAT,
            &self.key_codec,
            &self.decode,
            &self.codec,
            self.rows,
            self.original_bytes,
        );
        kv.set("partition.bytes", self.partition_bytes);
        kv.set("partitions", self.partitions.len());
        std::fs::write(dir.join("manifest"), kv.render())?;
        Ok(())
    }

    fn row_count(&self) -> u64 {
        self.rows
    }

    fn keys(&self, cache: &PartitionCache) -> Result<Vec<u64>> {
        let width = self.width();
        let mut out = Vec::with_capacity(self.rows as usize);
        let mut stats = LookupStats::default();
        for i in 0..self.partitions.len() {
            let rows = self.load(i, cache, &mut stats)?;
            out.extend((0..rows.len() / width).map(|r| row_key(&rows, width, r)));
        }
        Ok(out)
    }
}
