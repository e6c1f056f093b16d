use crate::error::{Error, Result};

/// Maps an encoded key index to its active input features.
///
/// The index is split back into its mixed-radix key components, and every
/// component is written in base `radix`; each digit is one-hot over its own
/// slot. Input width grows with the number of digits, not with the span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyFeaturizer {
    radix: u32,
    spans: Vec<u64>,
    weights: Vec<u64>,
    digits: Vec<Digit>,
    width: usize,
    domain: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Digit {
    component: usize,
    divisor: u64,
    size: u32,
    offset: u32,
}

pub const DEFAULT_RADIX: u32 = 8;

impl KeyFeaturizer {
    pub fn new(spans: &[u64], radix: u32) -> Result<Self> {
        if radix < 2 {
            return Err(Error::InvalidConfig(format!("input radix {radix} < 2")));
        }
        if spans.is_empty() || spans.contains(&0) {
            return Err(Error::InvalidConfig("key spans must be nonempty and positive".into()));
        }
        let mut weights = vec![0u64; spans.len()];
        let mut w: u64 = 1;
        for i in (0..spans.len()).rev() {
            weights[i] = w;
            w = w
                .checked_mul(spans[i])
                .ok_or_else(|| Error::DomainOverflow("key spans exceed u64".into()))?;
        }
        let mut digits = Vec::new();
        let mut offset = 0u32;
        for (c, &span) in spans.iter().enumerate() {
            let mut divisor: u64 = 1;
            loop {
                // remaining range covered by this and higher digits
                let rest = span.div_ceil(divisor);
                let last = rest <= radix as u64;
                let size = if last { rest as u32 } else { radix };
                digits.push(Digit {
                    component: c,
                    divisor,
                    size,
                    offset,
                });
                offset += size;
                if last {
                    break;
                }
                divisor *= radix as u64;
            }
        }
        Ok(Self {
            radix,
            spans: spans.to_vec(),
            weights,
            digits,
            width: offset as usize,
            domain: w,
        })
    }

    pub fn radix(&self) -> u32 {
        self.radix
    }

    pub fn spans(&self) -> &[u64] {
        &self.spans
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    /// Number of input features.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Active features per key (one per digit).
    pub fn active_per_key(&self) -> usize {
        self.digits.len()
    }

    /// Appends the active feature indices of `key`.
    pub fn push_active(&self, key: u64, out: &mut Vec<u32>) -> Result<()> {
        if key >= self.domain() {
            return Err(Error::KeyOutOfDomain(format!(
                "index {key} outside model domain {}",
                self.domain()
            )));
        }
        for d in &self.digits {
            let comp = (key / self.weights[d.component]) % self.spans[d.component];
            let digit = if d.size == self.radix {
                (comp / d.divisor) % self.radix as u64
            } else {
                comp / d.divisor
            };
            out.push(d.offset + digit as u32);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_of_single_component() {
        let f = KeyFeaturizer::new(&[100], 8).unwrap();
        // 100 = 8 * 8 + 36 -> digits sizes 8, 8, 2
        assert_eq!(f.width(), 18);
        let mut v = Vec::new();
        f.push_active(99, &mut v).unwrap();
        // 99 = 1*64 + 4*8 + 3
        assert_eq!(v, vec![3, 8 + 4, 16 + 1]);
        assert!(f.push_active(100, &mut v).is_err());
    }

    #[test]
    fn composite_components_are_separate() {
        let f = KeyFeaturizer::new(&[10, 3], 4).unwrap();
        // component 0: span 10 -> sizes 4, 3; component 1: span 3 -> size 3
        assert_eq!(f.width(), 10);
        let mut v = Vec::new();
        // key (7, 2) -> index 7*3+2 = 23
        f.push_active(23, &mut v).unwrap();
        assert_eq!(v, vec![3, 4 + 1, 7 + 2]);
    }

    #[test]
    fn feature_sets_are_injective() {
        let f = KeyFeaturizer::new(&[37, 5], 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for k in 0..f.domain() {
            let mut v = Vec::new();
            f.push_active(k, &mut v).unwrap();
            assert!(v.iter().all(|&i| (i as usize) < f.width()));
            assert!(seen.insert(v));
        }
    }
}
