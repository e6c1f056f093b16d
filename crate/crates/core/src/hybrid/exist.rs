use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

const HEADER_BYTES: u64 = 16;

/// One bit per encoded key in `[domain_min, domain_min + span)`. The window
/// grows to cover keys set outside it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExistenceBitVector {
    domain_min: u64,
    span: u64,
    words: Vec<u64>,
    ones: u64,
}

impl ExistenceBitVector {
    pub fn new(domain_min: u64, span: u64) -> Self {
        Self {
            domain_min,
            span,
            words: vec![0; span.div_ceil(64) as usize],
            ones: 0,
        }
    }

    /// Window spanning exactly `[min(keys), max(keys)]`, with those bits set.
    pub fn from_keys(keys: &[u64]) -> Self {
        let (Some(&lo), Some(&hi)) = (keys.iter().min(), keys.iter().max()) else {
            return Self::default();
        };
        let mut v = Self::new(lo, hi - lo + 1);
        for &k in keys {
            v.set(k);
        }
        if v.span > 64 * v.ones {
            tracing::warn!(
                span = v.span,
                keys = v.ones,
                "key domain is sparser than one key per 64 bits; bit vector dominates size"
            );
        }
        v
    }

    pub fn domain_min(&self) -> u64 {
        self.domain_min
    }

    pub fn span(&self) -> u64 {
        self.span
    }

    pub fn count_ones(&self) -> u64 {
        self.ones
    }

    pub fn contains(&self, key: u64) -> bool {
        if key < self.domain_min || key - self.domain_min >= self.span {
            return false;
        }
        let i = key - self.domain_min;
        self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    /// Sets the bit, growing the window if needed. Returns whether it was unset.
    pub fn set(&mut self, key: u64) -> bool {
        self.cover(key);
        let i = key - self.domain_min;
        let (w, b) = ((i / 64) as usize, i % 64);
        let was = self.words[w] >> b & 1 == 1;
        self.words[w] |= 1 << b;
        if !was {
            self.ones += 1;
        }
        !was
    }

    /// Clears the bit. Returns whether it was set.
    pub fn clear(&mut self, key: u64) -> bool {
        if !self.contains(key) {
            return false;
        }
        let i = key - self.domain_min;
        self.words[(i / 64) as usize] &= !(1 << (i % 64));
        self.ones -= 1;
        true
    }

    fn cover(&mut self, key: u64) {
        if self.span == 0 {
            *self = Self::new(key, 1);
            return;
        }
        let hi = self.domain_min + self.span - 1;
        if key >= self.domain_min && key <= hi {
            return;
        }
        let new_min = self.domain_min.min(key);
        let new_hi = hi.max(key);
        let mut grown = Self::new(new_min, new_hi - new_min + 1);
        for k in self.iter_range(self.domain_min, hi) {
            grown.set(k);
        }
        *self = grown;
    }

    /// Set keys in `[lo, hi]`, ascending.
    pub fn iter_range(&self, lo: u64, hi: u64) -> impl Iterator<Item = u64> + '_ {
        let end = if self.span == 0 || hi < self.domain_min {
            0
        } else {
            hi.min(self.domain_min + self.span - 1) - self.domain_min + 1
        };
        let start = lo.saturating_sub(self.domain_min).min(end);
        let min = self.domain_min;
        let mut i = start;
        std::iter::from_fn(move || {
            while i < end {
                let w = self.words[(i / 64) as usize] >> (i % 64);
                if w == 0 {
                    i = (i / 64 + 1) * 64;
                    continue;
                }
                i += w.trailing_zeros() as u64;
                if i >= end {
                    break;
                }
                let k = i;
                i += 1;
                return Some(min + k);
            }
            None
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.iter_range(0, u64::MAX)
    }

    pub fn serialized_size(&self) -> u64 {
        HEADER_BYTES + self.span.div_ceil(8)
    }

    /// Header `domain_min` as i64 and `span` as u64, then the bits
    /// little-endian, bit `i` of the window in byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(self.serialized_size() as usize);
        w.i64(self.domain_min as i64);
        w.u64(self.span);
        let n = self.span.div_ceil(8) as usize;
        let mut bytes: Vec<u8> = self.words.iter().flat_map(|x| x.to_le_bytes()).collect();
        bytes.truncate(n);
        w.bytes(&bytes);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let min = r.i64()?;
        let span = r.u64()?;
        if min < 0 {
            return Err(Error::Parse(format!("negative bit vector origin {min}")));
        }
        let n = span.div_ceil(8) as usize;
        let body = r.take(n)?;
        r.finish()?;
        let mut words = vec![0u64; span.div_ceil(64) as usize];
        for (i, &b) in body.iter().enumerate() {
            words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        if span % 64 != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << (span % 64)) - 1;
            }
        }
        let ones = words.iter().map(|w| w.count_ones() as u64).sum();
        Ok(Self {
            domain_min: min as u64,
            span,
            words,
            ones,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn size_is_header_plus_bits() {
        let v = ExistenceBitVector::from_keys(&[10, 19]);
        assert_eq!(v.span(), 10);
        assert_eq!(v.serialized_size(), 16 + 2);
        assert_eq!(v.to_bytes().len() as u64, v.serialized_size());
    }

    #[test]
    fn grows_both_ways() {
        let mut v = ExistenceBitVector::from_keys(&[100, 105]);
        v.set(3);
        v.set(300);
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![3, 100, 105, 300]);
        assert_eq!(v.domain_min(), 3);
        assert!(!v.contains(4));
        assert!(v.clear(100));
        assert!(!v.clear(100));
        assert_eq!(v.count_ones(), 3);
    }

    #[test]
    fn empty_vector_answers_false() {
        let v = ExistenceBitVector::default();
        assert!(!v.contains(0));
        assert_eq!(v.iter().count(), 0);
        assert_eq!(ExistenceBitVector::from_bytes(&v.to_bytes()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn matches_set_model(keys in proptest::collection::vec(0u64..5000, 1..300), clears in proptest::collection::vec(0u64..5000, 0..100), lo in 0u64..5000, len in 0u64..3000) {
            let mut v = ExistenceBitVector::from_keys(&keys);
            let mut model: BTreeSet<u64> = keys.iter().copied().collect();
            for c in clears {
                prop_assert_eq!(v.clear(c), model.remove(&c));
            }
            for k in 0..5000 {
                prop_assert_eq!(v.contains(k), model.contains(&k));
            }
            let hi = lo + len;
            let got: Vec<u64> = v.iter_range(lo, hi).collect();
            let want: Vec<u64> = model.range(lo..=hi).copied().collect();
            prop_assert_eq!(got, want);
            let back = ExistenceBitVector::from_bytes(&v.to_bytes()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
