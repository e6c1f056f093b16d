//! Schemas, dense integer coding of tabular rows, and the decode map.
//!
//! Value columns are dictionary coded in first-occurrence order. Key columns
//! are integers combined into a single mixed-radix index over the declared
//! (or observed) per-component domains, first component most significant.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    KeyComponent,
    Value,
}

/// Declared integer domain of one key component: `[min, min + span)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDomain {
    pub min: i64,
    pub span: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub domain: Option<KeyDomain>,
    dictionary: Vec<String>,
    index: HashMap<String, u32>,
}

impl ColumnSchema {
    pub fn value(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Value,
            domain: None,
            dictionary: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn key(name: impl Into<String>) -> Self {
        Self {
            kind: ColumnKind::KeyComponent,
            ..Self::value(name)
        }
    }

    pub fn with_domain(mut self, min: i64, span: u64) -> Self {
        self.domain = Some(KeyDomain { min, span });
        self
    }

    /// Seeds the dictionary; code `i` maps to `dictionary[i]`.
    pub fn with_dictionary<S: Into<String>>(mut self, dictionary: impl IntoIterator<Item = S>) -> Result<Self> {
        self.dictionary.clear();
        self.index.clear();
        for v in dictionary {
            let v = v.into();
            if self.index.contains_key(&v) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate dictionary value `{v}` in column `{}`",
                    self.name
                )));
            }
            self.index.insert(v.clone(), self.dictionary.len() as u32);
            self.dictionary.push(v);
        }
        Ok(self)
    }

    pub fn cardinality(&self) -> u32 {
        self.dictionary.len() as u32
    }

    pub fn dictionary(&self) -> &[String] {
        &self.dictionary
    }

    pub fn code_of(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    /// Returns the code for `value`, appending it to the dictionary if new.
    pub fn intern(&mut self, value: &str) -> u32 {
        if let Some(&c) = self.index.get(value) {
            return c;
        }
        let c = self.dictionary.len() as u32;
        self.dictionary.push(value.to_owned());
        self.index.insert(value.to_owned(), c);
        c
    }

    pub fn value_of(&self, code: u32) -> Result<&str> {
        self.dictionary
            .get(code as usize)
            .map(String::as_str)
            .ok_or(Error::CodeOutOfRange {
                code,
                cardinality: self.cardinality(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyComponent {
    pub name: String,
    pub domain_min: i64,
    pub domain_span: u64,
}

/// Mixed-radix codec from key tuples to dense indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KeyComponent>", into = "Vec<KeyComponent>")]
pub struct KeyCodec {
    components: Vec<KeyComponent>,
    radices: Vec<u64>,
    total_span: u64,
}

impl TryFrom<Vec<KeyComponent>> for KeyCodec {
    type Error = Error;

    fn try_from(components: Vec<KeyComponent>) -> Result<Self> {
        Self::new(components)
    }
}

impl From<KeyCodec> for Vec<KeyComponent> {
    fn from(codec: KeyCodec) -> Self {
        codec.components
    }
}

impl KeyCodec {
    pub fn new(components: Vec<KeyComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidSchema("key needs at least one component".into()));
        }
        let mut radices = vec![0u64; components.len()];
        let mut weight: u64 = 1;
        for (i, c) in components.iter().enumerate().rev() {
            if c.domain_span == 0 {
                return Err(Error::InvalidSchema(format!(
                    "key component `{}` has zero span",
                    c.name
                )));
            }
            if c.domain_min.checked_add((c.domain_span - 1) as i64).is_none() {
                return Err(Error::DomainOverflow(format!(
                    "component `{}` exceeds the i64 range",
                    c.name
                )));
            }
            radices[i] = weight;
            weight = weight.checked_mul(c.domain_span).ok_or_else(|| {
                Error::DomainOverflow(format!("product of key spans exceeds u64 at component `{}`", c.name))
            })?;
        }
        Ok(Self {
            components,
            radices,
            total_span: weight,
        })
    }

    /// Single integer key over `[min, min + span)`.
    pub fn single(name: impl Into<String>, min: i64, span: u64) -> Result<Self> {
        Self::new(vec![KeyComponent {
            name: name.into(),
            domain_min: min,
            domain_span: span,
        }])
    }

    pub fn components(&self) -> &[KeyComponent] {
        &self.components
    }

    pub fn spans(&self) -> Vec<u64> {
        self.components.iter().map(|c| c.domain_span).collect()
    }

    pub fn total_span(&self) -> u64 {
        self.total_span
    }

    pub fn encode(&self, key: &[i64]) -> Result<u64> {
        if key.len() != self.components.len() {
            return Err(Error::KeyOutOfDomain(format!(
                "expected {} key components, got {}",
                self.components.len(),
                key.len()
            )));
        }
        let mut e = 0u64;
        for ((k, c), r) in key.iter().zip(&self.components).zip(&self.radices) {
            let off = (*k as i128) - (c.domain_min as i128);
            if off < 0 || off >= c.domain_span as i128 {
                return Err(Error::KeyOutOfDomain(format!(
                    "{}={k} outside [{}, {})",
                    c.name,
                    c.domain_min,
                    c.domain_min as i128 + c.domain_span as i128
                )));
            }
            e += off as u64 * r;
        }
        Ok(e)
    }

    pub fn decode(&self, encoded: u64) -> Result<Vec<i64>> {
        if encoded >= self.total_span {
            return Err(Error::KeyOutOfDomain(format!(
                "index {encoded} >= span {}",
                self.total_span
            )));
        }
        Ok(self
            .components
            .iter()
            .zip(&self.radices)
            .map(|(c, r)| c.domain_min + ((encoded / r) % c.domain_span) as i64)
            .collect())
    }
}

/// Per-column dictionaries turning predicted codes back into original values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeMap {
    pub columns: Vec<(String, Vec<String>)>,
}

impl DecodeMap {
    pub fn decode(&self, column: usize, code: u32) -> Result<&str> {
        let dict = &self.columns[column].1;
        dict.get(code as usize)
            .map(String::as_str)
            .ok_or(Error::CodeOutOfRange {
                code,
                cardinality: dict.len() as u32,
            })
    }

    /// Column count, then per column: name, entry count, entries. Strings are
    /// u32-LE length prefixed UTF-8.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.u32(self.columns.len() as u32);
        for (name, dict) in &self.columns {
            w.str(name);
            w.u32(dict.len() as u32);
            for v in dict {
                w.str(v);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let n = r.u32()? as usize;
        let mut columns = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let len = r.u32()? as usize;
            let mut dict = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                dict.push(r.string()?);
            }
            columns.push((name, dict));
        }
        r.finish()?;
        Ok(Self { columns })
    }

    pub fn serialized_size(&self) -> u64 {
        let strings: usize = self
            .columns
            .iter()
            .map(|(n, d)| 8 + n.len() + d.iter().map(|v| 4 + v.len()).sum::<usize>())
            .sum();
        (4 + strings) as u64
    }
}

/// Key domain plus dictionary-coded value columns, stored columnar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRelation {
    pub key_codec: KeyCodec,
    pub value_columns: Vec<ColumnSchema>,
    pub keys: Vec<u64>,
    pub columns: Vec<Vec<u32>>,
}

const RELATION_MAGIC: &[u8; 4] = b"DMRL";
const RELATION_VERSION: u16 = 1;

impl EncodedRelation {
    pub fn new(
        key_codec: KeyCodec,
        value_columns: Vec<ColumnSchema>,
        keys: Vec<u64>,
        columns: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if columns.len() != value_columns.len() {
            return Err(Error::InvalidSchema(format!(
                "{} value schemas but {} code arrays",
                value_columns.len(),
                columns.len()
            )));
        }
        if value_columns.is_empty() {
            return Err(Error::InvalidSchema("relation needs a value column".into()));
        }
        for (schema, col) in value_columns.iter().zip(&columns) {
            if col.len() != keys.len() {
                return Err(Error::InvalidSchema(format!(
                    "column `{}` has {} rows, expected {}",
                    schema.name,
                    col.len(),
                    keys.len()
                )));
            }
            if let Some(&code) = col.iter().find(|&&c| c >= schema.cardinality()) {
                return Err(Error::CodeOutOfRange {
                    code,
                    cardinality: schema.cardinality(),
                });
            }
        }
        let span = key_codec.total_span();
        let mut seen = HashSet::with_capacity(keys.len());
        for (i, &k) in keys.iter().enumerate() {
            if k >= span {
                return Err(Error::KeyOutOfDomain(format!("row {i}: index {k} >= span {span}")));
            }
            if !seen.insert(k) {
                return Err(Error::DuplicateKey(i));
            }
        }
        Ok(Self {
            key_codec,
            value_columns,
            keys,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.value_columns.len()
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.value_columns.iter().map(|c| c.cardinality()).collect()
    }

    pub fn row_codes(&self, row: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Bytes of one fixed-width row: u64 key plus one u32 code per value column.
    pub fn row_width(&self) -> usize {
        row_width(self.n_values())
    }

    /// Size of the uncompressed fixed-width array representation.
    pub fn fixed_width_bytes(&self) -> u64 {
        (self.len() * self.row_width()) as u64
    }

    pub fn decode_map(&self) -> DecodeMap {
        DecodeMap {
            columns: self
                .value_columns
                .iter()
                .map(|c| (c.name.clone(), c.dictionary.clone()))
                .collect(),
        }
    }

    /// Rows reordered by ascending key.
    pub fn sorted_by_key(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&i| self.keys[i]);
        Self {
            key_codec: self.key_codec.clone(),
            value_columns: self.value_columns.clone(),
            keys: order.iter().map(|&i| self.keys[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| order.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Fixed-width little-endian rows in current row order.
    pub fn fixed_width_rows(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.fixed_width_bytes() as usize);
        for i in 0..self.len() {
            out.extend_from_slice(&self.keys[i].to_le_bytes());
            for c in &self.columns {
                out.extend_from_slice(&c[i].to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(RELATION_MAGIC);
        w.u16(RELATION_VERSION);
        w.u32(self.key_codec.components().len() as u32);
        for c in self.key_codec.components() {
            w.str(&c.name);
            w.i64(c.domain_min);
            w.u64(c.domain_span);
        }
        w.bytes(&self.decode_map().to_bytes());
        w.u64(self.len() as u64);
        for &k in &self.keys {
            w.u64(k);
        }
        for col in &self.columns {
            for &c in col {
                w.u32(c);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != RELATION_MAGIC {
            return Err(Error::Parse("not a relation file".into()));
        }
        let version = r.u16()?;
        if version != RELATION_VERSION {
            return Err(Error::Parse(format!("unsupported relation version {version}")));
        }
        let nk = r.u32()? as usize;
        let mut comps = Vec::with_capacity(nk.min(64));
        for _ in 0..nk {
            comps.push(KeyComponent {
                name: r.string()?,
                domain_min: r.i64()?,
                domain_span: r.u64()?,
            });
        }
        let key_codec = KeyCodec::new(comps)?;
        let ncols = r.u32()? as usize;
        let mut value_columns = Vec::with_capacity(ncols.min(1 << 12));
        for _ in 0..ncols {
            let name = r.string()?;
            let len = r.u32()? as usize;
            let mut dict = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                dict.push(r.string()?);
            }
            value_columns.push(ColumnSchema::value(name).with_dictionary(dict)?);
        }
        let n = r.u64()? as usize;
        let keys = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let columns = (0..ncols)
            .map(|_| (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(key_codec, value_columns, keys, columns)
    }

    /// Hex SHA-256 over the canonical serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn row_width(n_values: usize) -> usize {
    8 + 4 * n_values
}

pub fn one_hot(code: u32, cardinality: u32) -> Result<Vec<f32>> {
    if code >= cardinality {
        return Err(Error::CodeOutOfRange { code, cardinality });
    }
    let mut v = vec![0.0; cardinality as usize];
    v[code as usize] = 1.0;
    Ok(v)
}

/// Decodes predicted code rows; `None` rows (NULL) pass through.
pub fn decode_predictions(rows: &[Option<Vec<u32>>], map: &DecodeMap) -> Result<Vec<Option<Vec<String>>>> {
    rows.iter()
        .map(|row| {
            row.as_ref()
                .map(|codes| {
                    codes
                        .iter()
                        .enumerate()
                        .map(|(c, &code)| map.decode(c, code).map(str::to_owned))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()
        })
        .collect()
}

/// True for text that parses as a float but not as an integer.
pub fn looks_like_float(s: &str) -> bool {
    let s = s.trim();
    let Some(first) = s.chars().next() else {
        return false;
    };
    if !(first.is_ascii_digit() || matches!(first, '-' | '+' | '.')) {
        return false;
    }
    s.parse::<i64>().is_err() && s.parse::<f64>().is_ok()
}

/// Rejects any column with at least one floating-point value.
pub fn reject_float_columns(headers: &[String], rows: &[Vec<String>]) -> Result<()> {
    for (c, name) in headers.iter().enumerate() {
        if rows.iter().any(|r| r.get(c).is_some_and(|v| looks_like_float(v))) {
            return Err(Error::FloatColumnRejected(name.clone()));
        }
    }
    Ok(())
}

/// Encodes raw rows. `schema` describes the raw columns positionally; the
/// columns named in `key_columns` (in that order) form the composite key and
/// every other column becomes a value column.
pub fn encode_relation(
    rows: &[Vec<String>],
    schema: &[ColumnSchema],
    key_columns: &[String],
) -> Result<EncodedRelation> {
    let position = |name: &str| {
        schema
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    };
    let key_pos = key_columns.iter().map(|k| position(k)).collect::<Result<Vec<_>>>()?;
    if key_pos.is_empty() {
        return Err(Error::InvalidSchema("no key columns given".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != schema.len() {
            return Err(Error::Parse(format!(
                "row {i} has {} fields, schema has {}",
                row.len(),
                schema.len()
            )));
        }
    }

    let mut raw_keys: Vec<Vec<i64>> = Vec::with_capacity(rows.len());
    for row in rows {
        let mut k = Vec::with_capacity(key_pos.len());
        for &p in &key_pos {
            let v = row[p].trim();
            k.push(v.parse::<i64>().map_err(|_| Error::NonIntegerKey {
                column: schema[p].name.clone(),
                value: v.to_owned(),
            })?);
        }
        raw_keys.push(k);
    }

    let mut components = Vec::with_capacity(key_pos.len());
    for (j, &p) in key_pos.iter().enumerate() {
        let (min, span) = match schema[p].domain {
            Some(d) => (d.min, d.span),
            None => {
                let min = raw_keys.iter().map(|k| k[j]).min().unwrap_or(0);
                let max = raw_keys.iter().map(|k| k[j]).max().unwrap_or(0);
                let span = (max as i128 - min as i128 + 1) as u64;
                (min, span)
            }
        };
        components.push(KeyComponent {
            name: schema[p].name.clone(),
            domain_min: min,
            domain_span: span,
        });
    }
    let key_codec = KeyCodec::new(components)?;

    let mut keys = Vec::with_capacity(rows.len());
    let mut seen = HashSet::with_capacity(rows.len());
    for (i, k) in raw_keys.iter().enumerate() {
        let e = key_codec.encode(k)?;
        if !seen.insert(e) {
            return Err(Error::DuplicateKey(i));
        }
        keys.push(e);
    }

    let value_pos: Vec<usize> = (0..schema.len()).filter(|p| !key_pos.contains(p)).collect();
    let mut value_columns: Vec<ColumnSchema> = value_pos
        .iter()
        .map(|&p| {
            let mut s = schema[p].clone();
            s.kind = ColumnKind::Value;
            s.domain = None;
            s
        })
        .collect();
    let mut columns = vec![Vec::with_capacity(rows.len()); value_pos.len()];
    for row in rows {
        for (j, &p) in value_pos.iter().enumerate() {
            columns[j].push(value_columns[j].intern(&row[p]));
        }
    }
    EncodedRelation::new(key_codec, value_columns, keys, columns)
}

/// Header-named raw table, as read from CSV.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn encode(&self, key_columns: &[String]) -> Result<EncodedRelation> {
        let schema: Vec<ColumnSchema> = self
            .headers
            .iter()
            .map(|h| {
                if key_columns.contains(h) {
                    ColumnSchema::key(h.clone())
                } else {
                    ColumnSchema::value(h.clone())
                }
            })
            .collect();
        encode_relation(&self.rows, &schema, key_columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn first_occurrence_dictionary() {
        let rows = vec![strs(&["0", "A"]), strs(&["1", "B"]), strs(&["2", "A"])];
        let schema = [ColumnSchema::key("k"), ColumnSchema::value("v")];
        let rel = encode_relation(&rows, &schema, &strs(&["k"])).unwrap();
        assert_eq!(rel.columns[0], vec![0, 1, 0]);
        assert_eq!(rel.value_columns[0].cardinality(), 2);
        assert_eq!(rel.value_columns[0].dictionary(), &strs(&["A", "B"])[..]);
    }

    #[test]
    fn mixed_radix_key() {
        let codec = KeyCodec::new(vec![
            KeyComponent {
                name: "a".into(),
                domain_min: 0,
                domain_span: 10,
            },
            KeyComponent {
                name: "b".into(),
                domain_min: 0,
                domain_span: 10,
            },
        ])
        .unwrap();
        assert_eq!(codec.encode(&[3, 7]).unwrap(), 37);
        assert_eq!(codec.decode(37).unwrap(), vec![3, 7]);
        assert!(codec.encode(&[10, 0]).is_err());
        assert!(codec.decode(100).is_err());
    }

    #[test]
    fn duplicate_composite_key_rejected() {
        let rows = vec![strs(&["1", "2", "x"]), strs(&["1", "2", "y"])];
        let schema = [ColumnSchema::key("a"), ColumnSchema::key("b"), ColumnSchema::value("v")];
        let err = encode_relation(&rows, &schema, &strs(&["a", "b"])).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey(1)));
    }

    #[test]
    fn unknown_key_column() {
        let schema = [ColumnSchema::value("v")];
        let err = encode_relation(&[], &schema, &strs(&["k"])).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(c) if c == "k"));
    }

    #[test]
    fn domain_overflow() {
        let comps = (0..3)
            .map(|i| KeyComponent {
                name: format!("c{i}"),
                domain_min: 0,
                domain_span: 1 << 30,
            })
            .collect();
        assert!(matches!(KeyCodec::new(comps), Err(Error::DomainOverflow(_))));
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(3, 5).unwrap(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 1).unwrap(), vec![1.0]);
        assert!(matches!(
            one_hot(5, 5),
            Err(Error::CodeOutOfRange {
                code: 5,
                cardinality: 5
            })
        ));
    }

    #[test]
    fn decode_cases() {
        let map = DecodeMap {
            columns: vec![("s".into(), strs(&["LOW", "HIGH"]))],
        };
        let out = decode_predictions(&[Some(vec![1]), None], &map).unwrap();
        assert_eq!(out, vec![Some(strs(&["HIGH"])), None]);
        assert!(decode_predictions(&[Some(vec![2])], &map).is_err());
    }

    #[test]
    fn key_injectivity_exhaustive() {
        let codec = KeyCodec::new(vec![
            KeyComponent {
                name: "a".into(),
                domain_min: -3,
                domain_span: 17,
            },
            KeyComponent {
                name: "b".into(),
                domain_min: 5,
                domain_span: 23,
            },
            KeyComponent {
                name: "c".into(),
                domain_min: 0,
                domain_span: 25,
            },
        ])
        .unwrap();
        assert_eq!(codec.total_span(), 17 * 23 * 25);
        let mut seen = vec![false; codec.total_span() as usize];
        for a in -3..14 {
            for b in 5..28 {
                for c in 0..25 {
                    let e = codec.encode(&[a, b, c]).unwrap();
                    assert!(!seen[e as usize]);
                    seen[e as usize] = true;
                    assert_eq!(codec.decode(e).unwrap(), vec![a, b, c]);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn decode_map_bytes() {
        let map = DecodeMap {
            columns: vec![("a".into(), strs(&["x", "yy"])), ("b".into(), vec![])],
        };
        let bytes = map.to_bytes();
        assert_eq!(bytes.len() as u64, map.serialized_size());
        assert_eq!(DecodeMap::from_bytes(&bytes).unwrap(), map);
        assert!(DecodeMap::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn float_detection() {
        assert!(looks_like_float("1.5"));
        assert!(looks_like_float("-2e3"));
        assert!(!looks_like_float("12"));
        assert!(!looks_like_float("inf"));
        assert!(!looks_like_float("1.2.3"));
        assert!(!looks_like_float("A"));
    }

    #[test]
    fn relation_bytes_round_trip() {
        let rows = vec![strs(&["5", "a", "q"]), strs(&["9", "b", "q"])];
        let schema = [
            ColumnSchema::key("k"),
            ColumnSchema::value("v"),
            ColumnSchema::value("w"),
        ];
        let rel = encode_relation(&rows, &schema, &strs(&["k"])).unwrap();
        assert_eq!(rel.keys, vec![0, 4]);
        let back = EncodedRelation::from_bytes(&rel.to_bytes()).unwrap();
        assert_eq!(back, rel);
        assert_eq!(back.fingerprint(), rel.fingerprint());
    }

    #[test]
    fn round_trip_ten_thousand_rows_random_dictionaries() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dicts: Vec<Vec<String>> = (0..3)
            .map(|_| {
                let n = rng.gen_range(1..50);
                (0..n).map(|i| format!("{i}-{:x}", rng.gen::<u32>())).collect()
            })
            .collect();
        let rows: Vec<Vec<String>> = (0..10_000)
            .map(|i| {
                let mut row = vec![(i * 7 + 1000).to_string()];
                row.extend(dicts.iter().map(|d| d[rng.gen_range(0..d.len())].clone()));
                row
            })
            .collect();
        let schema = [
            ColumnSchema::key("k"),
            ColumnSchema::value("a"),
            ColumnSchema::value("b"),
            ColumnSchema::value("c"),
        ];
        let rel = encode_relation(&rows, &schema, &strs(&["k"])).unwrap();
        let codes: Vec<Option<Vec<u32>>> = (0..rel.len()).map(|i| Some(rel.row_codes(i))).collect();
        let decoded = decode_predictions(&codes, &rel.decode_map()).unwrap();
        for (row, dec) in rows.iter().zip(decoded) {
            assert_eq!(&row[1..], &dec.unwrap()[..]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn encode_decode_round_trip(
            seed_rows in prop::collection::vec(prop::collection::vec(0u8..12, 3), 1..700),
        ) {
            let rows: Vec<Vec<String>> = seed_rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut row = vec![(i as i64 * 3 - 50).to_string()];
                    row.extend(r.iter().map(|v| format!("val-{v}")));
                    row
                })
                .collect();
            let schema = [
                ColumnSchema::key("k"),
                ColumnSchema::value("a"),
                ColumnSchema::value("b"),
                ColumnSchema::value("c"),
            ];
            let rel = encode_relation(&rows, &schema, &["k".to_string()]).unwrap();
            let codes: Vec<Option<Vec<u32>>> = (0..rel.len()).map(|i| Some(rel.row_codes(i))).collect();
            let decoded = decode_predictions(&codes, &rel.decode_map()).unwrap();
            for (row, dec) in rows.iter().zip(decoded) {
                prop_assert_eq!(&row[1..], &dec.unwrap()[..]);
            }
            for (row, &k) in rows.iter().zip(&rel.keys) {
                prop_assert_eq!(rel.key_codec.decode(k).unwrap(), vec![row[0].parse::<i64>().unwrap()]);
            }
        }

        #[test]
        fn one_hot_sums_to_one(card in 1u32..300, frac in 0.0f64..1.0) {
            let code = ((card as f64) * frac) as u32 % card;
            let v = one_hot(code, card).unwrap();
            prop_assert_eq!(v.iter().sum::<f32>(), 1.0);
        }
    }
}
