//! On-disk layout: `manifest`, `model.dmnn`, `exist.bv`, `decode.map`,
//! `aux/part-NNNNN.<ext>` and `aux/overlay.log`. Sealed partitions are not
//! read until a lookup touches them.

use std::path::Path;

use super::{AuxTable, BuildStats, ExistenceBitVector, HybridConfig, HybridMapping, SealedPartition};
use crate::cache::{next_store_id, PartitionCache};
use crate::codec::{Codec, CodecId};
use crate::encoding::{DecodeMap, KeyCodec, KeyComponent};
use crate::error::{Error, Result};
use crate::neural::MultiTaskNet;
use crate::store::{partition_file_name, read_component, write_blob, BlobSource, KvText};

pub const FORMAT: &str = "deepmap-hybrid";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn write_key_codec(kv: &mut KvText, codec: &KeyCodec) {
    kv.set("key.count", codec.components().len());
    for (i, c) in codec.components().iter().enumerate() {
        kv.set(format!("key.{i}.name"), &c.name);
        kv.set(format!("key.{i}.min"), c.domain_min);
        kv.set(format!("key.{i}.span"), c.domain_span);
    }
}

pub(crate) fn read_key_codec(kv: &KvText) -> Result<KeyCodec> {
    let n: usize = kv.require("key.count")?;
    let comps = (0..n)
        .map(|i| {
            Ok(KeyComponent {
                name: kv.require(&format!("key.{i}.name"))?,
                domain_min: kv.require(&format!("key.{i}.min"))?,
                domain_span: kv.require(&format!("key.{i}.span"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    KeyCodec::new(comps).map_err(|e| Error::CorruptManifest(e.to_string()))
}

pub(crate) fn remove_stale_partitions(aux_dir: &Path, keep: usize) -> Result<()> {
    for entry in std::fs::read_dir(aux_dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        let index = name
            .strip_prefix("part-")
            .and_then(|rest| rest.split('.').next())
            .and_then(|n| n.parse::<usize>().ok());
        if index.is_some_and(|i| i >= keep) {
            std::fs::remove_file(aux_dir.join(name.as_ref()))?;
        }
    }
    Ok(())
}

pub fn save(h: &HybridMapping, dir: &Path) -> Result<()> {
    let aux_dir = dir.join("aux");
    std::fs::create_dir_all(&aux_dir)?;
    let model = h.model.to_bytes();
    let exist = h.exist.to_bytes();
    let decode = h.decode.to_bytes();
    let overlay = h.aux.overlay_bytes();
    std::fs::write(dir.join("model.dmnn"), &model)?;
    std::fs::write(dir.join("exist.bv"), &exist)?;
    std::fs::write(dir.join("decode.map"), &decode)?;
    std::fs::write(aux_dir.join("overlay.log"), &overlay)?;

    let mut kv = KvText::default();
    kv.set("format", FORMAT);
    kv.set("version", FORMAT_VERSION);
    write_key_codec(&mut kv, &h.key_codec);
    kv.set("values", h.n_values());
    kv.set("codec", h.aux.codec.id);
    kv.set("codec.level", h.aux.codec.level);
    kv.set("partition.target_bytes", h.config.partition_target_bytes);
    kv.set("partition.entries", h.aux.entries_per_partition);
    kv.set("partitions", h.aux.sealed.len());
    kv.set("aux.next_id", h.aux.next_id);
    let ext = h.aux.codec.id.ext();
    for (i, p) in h.aux.sealed.iter().enumerate() {
        let name = partition_file_name(i, ext);
        write_blob(&p.blob, &aux_dir.join(&name))?;
        kv.set(
            format!("partition.{i:05}"),
            format!(
                "{name},{},{},{},{},{}",
                p.id,
                p.min_key,
                p.max_key,
                p.count,
                p.blob.len()
            ),
        );
    }
    remove_stale_partitions(&aux_dir, h.aux.sealed.len())?;
    let sizes = [
        ("size.model", model.len() as u64),
        ("size.aux", h.aux.serialized_size()),
        ("size.exist", exist.len() as u64),
        ("size.decode", decode.len() as u64),
    ];
    for (k, v) in sizes {
        kv.set(k, v);
    }
    kv.set("size.total", sizes.iter().map(|s| s.1).sum::<u64>());
    kv.set("original_bytes", h.original_bytes);
    kv.set("modified_bytes", h.modified_bytes);
    kv.set("retrain_threshold", h.config.retrain_threshold);
    kv.set("retrains", h.retrains);
    kv.set("stats.rows_total", h.stats.rows_total);
    kv.set("stats.rows_misclassified", h.stats.rows_misclassified);
    kv.set("stats.memorization", h.stats.memorization_fraction);
    if let Some(arch) = &h.arch {
        kv.set("arch", arch);
    }
    std::fs::write(dir.join("manifest"), kv.render())?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<HybridMapping> {
    let manifest = read_component(&dir.join("manifest"))?;
    let kv = KvText::parse(&String::from_utf8_lossy(&manifest)).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    if kv.get_str("format") != Some(FORMAT) {
        return Err(Error::CorruptManifest(format!("not a {FORMAT} manifest")));
    }
    let version: u32 = kv.require("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptManifest(format!("unsupported version {version}")));
    }
    let key_codec = read_key_codec(&kv)?;
    let n_values: usize = kv.require("values")?;
    let codec_id: CodecId = kv.require("codec")?;
    let codec = Codec::new(codec_id)
        .with_level(kv.require("codec.level")?)
        .for_rows(n_values);

    let model = MultiTaskNet::from_bytes(&read_component(&dir.join("model.dmnn"))?)?;
    let exist = ExistenceBitVector::from_bytes(&read_component(&dir.join("exist.bv"))?)
        .map_err(|e| Error::CorruptManifest(format!("exist.bv: {e}")))?;
    let decode = DecodeMap::from_bytes(&read_component(&dir.join("decode.map"))?)
        .map_err(|e| Error::CorruptManifest(format!("decode.map: {e}")))?;
    let aux_dir = dir.join("aux");
    let overlay = AuxTable::parse_overlay(&read_component(&aux_dir.join("overlay.log"))?, n_values)?;

    let n_parts: usize = kv.require("partitions")?;
    let mut sealed = Vec::with_capacity(n_parts);
    for i in 0..n_parts {
        let key = format!("partition.{i:05}");
        let line: String = kv.require(&key)?;
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::CorruptManifest(format!("bad `{key}`: {line}"));
        if fields.len() != 6 {
            return Err(bad());
        }
        let num = |j: usize| fields[j].parse::<u64>().map_err(|_| bad());
        sealed.push(SealedPartition {
            id: num(1)?,
            min_key: num(2)?,
            max_key: num(3)?,
            count: num(4)?,
            blob: BlobSource::File {
                path: aux_dir.join(fields[0]),
                len: num(5)?,
            },
        });
    }
    let aux = AuxTable {
        codec,
        n_values,
        entries_per_partition: kv.require("partition.entries")?,
        sealed,
        overlay,
        next_id: kv.require("aux.next_id")?,
    };
    if decode.columns.len() != n_values || model.heads.len() != n_values {
        return Err(Error::CorruptManifest(format!(
            "manifest says {n_values} values; decode map has {}, model has {}",
            decode.columns.len(),
            model.heads.len()
        )));
    }
    let config = HybridConfig {
        partition_target_bytes: kv.require("partition.target_bytes")?,
        codec: codec_id,
        codec_level: codec.level,
        retrain_threshold: kv.require("retrain_threshold")?,
    };
    Ok(HybridMapping {
        store_id: next_store_id(),
        key_codec,
        model,
        aux,
        exist,
        decode,
        stats: BuildStats {
            rows_total: kv.require("stats.rows_total")?,
            rows_misclassified: kv.require("stats.rows_misclassified")?,
            memorization_fraction: kv.require("stats.memorization")?,
        },
        config,
        original_bytes: kv.require("original_bytes")?,
        modified_bytes: kv.require("modified_bytes")?,
        retrains: kv.require("retrains")?,
        arch: kv.get_str("arch").map(str::to_owned),
        maintenance: PartitionCache::new(super::MAINTENANCE_CACHE_BYTES),
    })
}
