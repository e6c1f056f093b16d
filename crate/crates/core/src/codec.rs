//! Block codecs for sealed partitions.
//!
//! `Dictionary` understands the fixed-width row layout (u64 key, then one
//! u32 per value column) and remaps every field to dense ids of minimal byte
//! width. Inputs that are not whole rows are stored raw behind a flag byte,
//! so it stays lossless for arbitrary bytes.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecId {
    None,
    Dictionary,
    Gzip,
    Zstd,
    Lzma,
}

impl CodecId {
    pub const ALL: [CodecId; 5] = [
        CodecId::None,
        CodecId::Dictionary,
        CodecId::Gzip,
        CodecId::Zstd,
        CodecId::Lzma,
    ];

    /// File extension of a partition written with this codec.
    pub fn ext(self) -> &'static str {
        match self {
            CodecId::None => "raw",
            CodecId::Dictionary => "dict",
            CodecId::Gzip => "gz",
            CodecId::Zstd => "zst",
            CodecId::Lzma => "xz",
        }
    }

    pub fn default_level(self) -> i32 {
        match self {
            CodecId::Zstd => 1,
            CodecId::Gzip | CodecId::Lzma => 6,
            CodecId::None | CodecId::Dictionary => 0,
        }
    }
}

impl fmt::Display for CodecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodecId::None => "none",
            CodecId::Dictionary => "dictionary",
            CodecId::Gzip => "gzip",
            CodecId::Zstd => "zstd",
            CodecId::Lzma => "lzma",
        })
    }
}

impl FromStr for CodecId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" | "raw" => CodecId::None,
            "dictionary" | "dict" | "d" => CodecId::Dictionary,
            "gzip" | "gz" | "g" => CodecId::Gzip,
            "zstd" | "zstandard" | "zst" | "z" => CodecId::Zstd,
            "lzma" | "xz" | "l" => CodecId::Lzma,
            other => return Err(Error::InvalidConfig(format!("unknown codec `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    pub id: CodecId,
    pub level: i32,
    /// Value columns per row; only the dictionary codec reads it.
    pub n_values: usize,
}

impl Codec {
    pub fn new(id: CodecId) -> Self {
        Self {
            id,
            level: id.default_level(),
            n_values: 0,
        }
    }

    pub fn with_level(mut self, level: i32) -> Self {
        self.level = level;
        self
    }

    pub fn for_rows(mut self, n_values: usize) -> Self {
        self.n_values = n_values;
        self
    }

    pub fn compress(&self, data: &[u8]) -> Result<Vec<u8>> {
        let codec_err = |e: std::io::Error| Error::Codec(format!("{} compress: {e}", self.id));
        match self.id {
            CodecId::None => Ok(data.to_vec()),
            CodecId::Dictionary => Ok(dictionary_encode(data, self.n_values)),
            CodecId::Gzip => {
                let level = flate2::Compression::new(self.level.clamp(0, 9) as u32);
                let mut enc = flate2::write::GzEncoder::new(Vec::new(), level);
                enc.write_all(data).map_err(codec_err)?;
                enc.finish().map_err(codec_err)
            }
            CodecId::Zstd => zstd::bulk::compress(data, self.level).map_err(codec_err),
            CodecId::Lzma => {
                let mut enc = xz2::write::XzEncoder::new(Vec::new(), self.level.clamp(0, 9) as u32);
                enc.write_all(data).map_err(codec_err)?;
                enc.finish().map_err(codec_err)
            }
        }
    }

    pub fn decompress(&self, data: &[u8]) -> Result<Vec<u8>> {
        let codec_err = |e: std::io::Error| Error::Codec(format!("{} decompress: {e}", self.id));
        match self.id {
            CodecId::None => Ok(data.to_vec()),
            CodecId::Dictionary => dictionary_decode(data),
            CodecId::Gzip => {
                let mut out = Vec::new();
                flate2::read::GzDecoder::new(data)
                    .read_to_end(&mut out)
                    .map_err(codec_err)?;
                Ok(out)
            }
            CodecId::Zstd => {
                let mut out = Vec::new();
                zstd::stream::read::Decoder::new(data)
                    .and_then(|mut d| d.read_to_end(&mut out))
                    .map_err(codec_err)?;
                Ok(out)
            }
            CodecId::Lzma => {
                let mut out = Vec::new();
                xz2::read::XzDecoder::new(data)
                    .read_to_end(&mut out)
                    .map_err(codec_err)?;
                Ok(out)
            }
        }
    }
}

const DICT_RAW: u8 = 0;
const DICT_ROWS: u8 = 1;
const FIELD_RAW: u8 = 0;
const FIELD_DICT: u8 = 1;

fn field_widths(n_values: usize) -> Vec<usize> {
    std::iter::once(8).chain(std::iter::repeat_n(4, n_values)).collect()
}

fn id_width(distinct: usize) -> usize {
    match distinct {
        0..=0x100 => 1,
        0x101..=0x1_0000 => 2,
        _ => 4,
    }
}

fn read_field(row: &[u8], at: usize, width: usize) -> u64 {
    let mut b = [0u8; 8];
    b[..width].copy_from_slice(&row[at..at + width]);
    u64::from_le_bytes(b)
}

fn dictionary_encode(data: &[u8], n_values: usize) -> Vec<u8> {
    let widths = field_widths(n_values);
    let row: usize = widths.iter().sum();
    let mut w = ByteWriter::with_capacity(data.len() / 2 + 16);
    if data.is_empty() || !data.len().is_multiple_of(row) {
        w.u8(DICT_RAW);
        w.bytes(data);
        return w.into_inner();
    }
    let n = data.len() / row;
    w.u8(DICT_ROWS);
    w.u16(n_values as u16);
    w.u32(n as u32);
    let mut offset = 0;
    for &width in &widths {
        let values: Vec<u64> = data.chunks_exact(row).map(|r| read_field(r, offset, width)).collect();
        let mut distinct = values.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let idw = id_width(distinct.len());
        let dict_cost = distinct.len() * width + n * idw;
        if dict_cost < n * width {
            let index: HashMap<u64, u32> = distinct.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
            w.u8(FIELD_DICT);
            w.u32(distinct.len() as u32);
            for &v in &distinct {
                w.bytes(&v.to_le_bytes()[..width]);
            }
            for v in &values {
                w.bytes(&index[v].to_le_bytes()[..idw]);
            }
        } else {
            w.u8(FIELD_RAW);
            for &v in &values {
                w.bytes(&v.to_le_bytes()[..width]);
            }
        }
        offset += width;
    }
    w.into_inner()
}

fn dictionary_decode(data: &[u8]) -> Result<Vec<u8>> {
    let corrupt = |e: Error| Error::Codec(format!("dictionary decode: {e}"));
    let mut r = ByteReader::new(data);
    match r.u8().map_err(corrupt)? {
        DICT_RAW => return Ok(r.take(r.remaining()).map_err(corrupt)?.to_vec()),
        DICT_ROWS => {}
        flag => return Err(Error::Codec(format!("dictionary decode: bad flag {flag}"))),
    }
    let n_values = r.u16().map_err(corrupt)? as usize;
    let n = r.u32().map_err(corrupt)? as usize;
    let widths = field_widths(n_values);
    let row: usize = widths.iter().sum();
    let mut out = vec![
        0u8;
        n.checked_mul(row)
            .filter(|&b| b <= 1 << 34)
            .ok_or_else(|| { Error::Codec("dictionary decode: implausible row count".into()) })?
    ];
    let mut offset = 0;
    for &width in &widths {
        match r.u8().map_err(corrupt)? {
            FIELD_DICT => {
                let distinct = r.u32().map_err(corrupt)? as usize;
                let dict = r.take(distinct * width).map_err(corrupt)?;
                let idw = id_width(distinct);
                let ids = r.take(n * idw).map_err(corrupt)?;
                for (i, id) in ids.chunks_exact(idw).enumerate() {
                    let id = read_field(id, 0, idw) as usize;
                    if id >= distinct {
                        return Err(Error::Codec(format!("dictionary decode: id {id} >= {distinct}")));
                    }
                    out[i * row + offset..i * row + offset + width]
                        .copy_from_slice(&dict[id * width..(id + 1) * width]);
                }
            }
            FIELD_RAW => {
                let raw = r.take(n * width).map_err(corrupt)?;
                for (i, v) in raw.chunks_exact(width).enumerate() {
                    out[i * row + offset..i * row + offset + width].copy_from_slice(v);
                }
            }
            mode => return Err(Error::Codec(format!("dictionary decode: bad field mode {mode}"))),
        }
        offset += width;
    }
    r.finish().map_err(corrupt)?;
    Ok(out)
}
