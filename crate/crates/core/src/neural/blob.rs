//! Model blob: magic `DMNN`, u16 version, topology table, then every layer's
//! weights followed by its bias as little-endian f32, in canonical layer order.
//!
//! Topology: u32 input radix; u16 component count and a u64 span each;
//! u16 shared count and per layer (u32 parent, u32 in, u32 out, u8 act);
//! u16 head count and per head (u32 tap, u16 layers, then per layer
//! u32 in, u32 out, u8 act).

use super::featurize::KeyFeaturizer;
use super::layer::{Activation, Dense, LayerSpec};
use super::net::{Head, MultiTaskNet, SharedLayer};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const BLOB_MAGIC: &[u8; 4] = b"DMNN";
pub const BLOB_VERSION: u16 = 1;

impl MultiTaskNet<f32> {
    pub fn header_size(&self) -> usize {
        4 + 2
            + 4
            + 2
            + 8 * self.featurizer.spans().len()
            + 2
            + 13 * self.shared.len()
            + 2
            + self.heads.iter().map(|h| 6 + 9 * h.layers.len()).sum::<usize>()
    }

    /// Exact byte size of [`Self::to_bytes`].
    pub fn serialized_size(&self) -> u64 {
        (self.header_size() + 4 * self.param_count()) as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(self.serialized_size() as usize);
        w.bytes(BLOB_MAGIC);
        w.u16(BLOB_VERSION);
        w.u32(self.featurizer.radix());
        w.u16(self.featurizer.spans().len() as u16);
        for &s in self.featurizer.spans() {
            w.u64(s);
        }
        w.u16(self.shared.len() as u16);
        for s in &self.shared {
            w.u32(s.parent as u32);
            write_spec(&mut w, &s.dense);
        }
        w.u16(self.heads.len() as u16);
        for h in &self.heads {
            w.u32(h.tap as u32);
            w.u16(h.layers.len() as u16);
            for l in &h.layers {
                write_spec(&mut w, l);
            }
        }
        for layer in self.layers() {
            for &v in layer.weights.iter().chain(&layer.bias) {
                w.f32(v);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |e: Error| Error::CorruptBlob(e.to_string());
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(corrupt)? != BLOB_MAGIC {
            return Err(Error::CorruptBlob("bad magic".into()));
        }
        let version = r.u16().map_err(corrupt)?;
        if version != BLOB_VERSION {
            return Err(Error::CorruptBlob(format!("unsupported version {version}")));
        }
        let radix = r.u32().map_err(corrupt)?;
        let n_spans = r.u16().map_err(corrupt)? as usize;
        let spans = (0..n_spans)
            .map(|_| r.u64())
            .collect::<Result<Vec<_>>>()
            .map_err(corrupt)?;
        let featurizer = KeyFeaturizer::new(&spans, radix).map_err(corrupt)?;
        let n_shared = r.u16().map_err(corrupt)? as usize;
        let mut shared = Vec::with_capacity(n_shared);
        for _ in 0..n_shared {
            let parent = r.u32().map_err(corrupt)? as usize;
            shared.push(SharedLayer {
                parent,
                dense: Dense::zeros(read_spec(&mut r)?),
            });
        }
        let n_heads = r.u16().map_err(corrupt)? as usize;
        let mut heads = Vec::with_capacity(n_heads);
        for _ in 0..n_heads {
            let tap = r.u32().map_err(corrupt)? as usize;
            let n_layers = r.u16().map_err(corrupt)? as usize;
            let layers = (0..n_layers)
                .map(|_| read_spec(&mut r).map(Dense::zeros))
                .collect::<Result<Vec<_>>>()?;
            heads.push(Head { tap, layers });
        }
        let mut net = MultiTaskNet {
            featurizer,
            shared,
            heads,
        };
        net.validate().map_err(corrupt)?;
        let expected = 4 * net.param_count();
        if r.remaining() != expected {
            return Err(Error::CorruptBlob(format!(
                "payload is {} bytes, topology needs {expected}",
                r.remaining()
            )));
        }
        for layer in net.layers_mut() {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = r.f32().map_err(corrupt)?;
            }
        }
        Ok(net)
    }
}

fn write_spec(w: &mut ByteWriter, l: &Dense<f32>) {
    w.u32(l.in_dim as u32);
    w.u32(l.out_dim as u32);
    w.u8(l.activation.code());
}

fn read_spec(r: &mut ByteReader) -> Result<LayerSpec> {
    let corrupt = |e: Error| Error::CorruptBlob(e.to_string());
    let in_dim = r.u32().map_err(corrupt)? as usize;
    let out_dim = r.u32().map_err(corrupt)? as usize;
    let act = r.u8().map_err(corrupt)?;
    let activation =
        Activation::from_code(act).ok_or_else(|| Error::CorruptBlob(format!("unknown activation {act}")))?;
    // guards the allocation below against garbage topology
    if in_dim.saturating_mul(out_dim) > 1 << 28 {
        return Err(Error::CorruptBlob(format!("layer {in_dim}x{out_dim} too large")));
    }
    Ok(LayerSpec {
        in_dim,
        out_dim,
        activation,
    })
}
