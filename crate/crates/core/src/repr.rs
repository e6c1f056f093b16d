//! Names, builders, and loaders for every representation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{build_array, build_hash, partition_count_for, ArrayRep, HashRep, ARRAY_FORMAT, HASH_FORMAT};
use crate::codec::{Codec, CodecId};
use crate::encoding::EncodedRelation;
use crate::error::{Error, Result};
use crate::hybrid::{HybridConfig, HybridMapping, ModelRecipe, RetrainStrategy};
use crate::store::{read_component, KvText, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Repr {
    /// Hybrid with zstd aux partitions.
    #[serde(rename = "dm-z", alias = "dm")]
    Dm,
    /// Hybrid with lzma aux partitions.
    DmL,
    Ab,
    AbcD,
    AbcG,
    AbcZ,
    AbcL,
    Hb,
    HbcZ,
    HbcL,
}

impl Repr {
    pub const BASELINES: [Repr; 8] = [
        Repr::Ab,
        Repr::AbcD,
        Repr::AbcG,
        Repr::AbcZ,
        Repr::AbcL,
        Repr::Hb,
        Repr::HbcZ,
        Repr::HbcL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Repr::Dm => "dm-z",
            Repr::DmL => "dm-l",
            Repr::Ab => "ab",
            Repr::AbcD => "abc-d",
            Repr::AbcG => "abc-g",
            Repr::AbcZ => "abc-z",
            Repr::AbcL => "abc-l",
            Repr::Hb => "hb",
            Repr::HbcZ => "hbc-z",
            Repr::HbcL => "hbc-l",
        }
    }

    pub fn codec(self) -> CodecId {
        match self {
            Repr::Dm | Repr::AbcZ | Repr::HbcZ => CodecId::Zstd,
            Repr::DmL | Repr::AbcL | Repr::HbcL => CodecId::Lzma,
            Repr::Ab | Repr::Hb => CodecId::None,
            Repr::AbcD => CodecId::Dictionary,
            Repr::AbcG => CodecId::Gzip,
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, Repr::Dm | Repr::DmL)
    }
}

impl fmt::Display for Repr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Repr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let all = [Repr::Dm, Repr::DmL].into_iter().chain(Repr::BASELINES);
        if s == "dm" {
            return Ok(Repr::Dm);
        }
        all.into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown representation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    /// Uncompressed bytes per partition, for aux tables and baselines alike.
    pub partition_bytes: u64,
    /// Overrides the codec's default level.
    pub codec_level: Option<i32>,
    /// Hybrid model source; `Fixed` trains one architecture.
    pub model: RetrainStrategy,
    pub retrain_threshold: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            partition_bytes: crate::baselines::DEFAULT_PARTITION_BYTES,
            codec_level: None,
            model: RetrainStrategy::Fixed(ModelRecipe::default()),
            retrain_threshold: crate::hybrid::DEFAULT_RETRAIN_THRESHOLD,
        }
    }
}

impl BuildOptions {
    fn codec(&self, id: CodecId) -> Codec {
        let c = Codec::new(id);
        match self.codec_level {
            Some(l) => c.with_level(l),
            None => c,
        }
    }

    pub fn hybrid_config(&self, repr: Repr) -> HybridConfig {
        let codec = self.codec(repr.codec());
        HybridConfig {
            partition_target_bytes: self.partition_bytes,
            codec: codec.id,
            codec_level: codec.level,
            retrain_threshold: self.retrain_threshold,
        }
    }
}

pub fn build_hybrid(data: &EncodedRelation, repr: Repr, opts: &BuildOptions) -> Result<HybridMapping> {
    let (net, arch) = opts.model.fit(data)?;
    let mut h = HybridMapping::build(data, net, opts.hybrid_config(repr))?;
    h.arch = arch;
    Ok(h)
}

pub fn build_store(data: &EncodedRelation, repr: Repr, opts: &BuildOptions) -> Result<Box<dyn Store>> {
    let codec = opts.codec(repr.codec());
    Ok(match repr {
        Repr::Dm | Repr::DmL => Box::new(build_hybrid(data, repr, opts)?),
        Repr::Ab | Repr::AbcD | Repr::AbcG | Repr::AbcZ | Repr::AbcL => {
            Box::new(build_array(data, codec, opts.partition_bytes)?)
        }
        Repr::Hb | Repr::HbcZ | Repr::HbcL => {
            let count = partition_count_for(data.len(), data.n_values(), opts.partition_bytes);
            Box::new(build_hash(data, codec, count)?)
        }
    })
}

/// Format name recorded in a persisted store's manifest.
pub fn stored_format(dir: &Path) -> Result<String> {
    let kv = KvText::parse(&String::from_utf8_lossy(&read_component(&dir.join("manifest"))?))
        .map_err(|e| Error::CorruptManifest(e.to_string()))?;
    kv.require("format")
}

pub fn open_store(dir: &Path) -> Result<Box<dyn Store>> {
    let format = stored_format(dir)?;
    Ok(match format.as_str() {
        crate::hybrid::HYBRID_FORMAT => Box::new(HybridMapping::load(dir)?),
        ARRAY_FORMAT => Box::new(ArrayRep::load_dir(dir)?),
        HASH_FORMAT => Box::new(HashRep::load_dir(dir)?),
        other => return Err(Error::CorruptManifest(format!("unknown store format `{other}`"))),
    })
}
