use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::space::{ArchSpec, Node};
use crate::error::Result;
use crate::neural::{Activation, Dense, Head, KeyFeaturizer, LayerSpec, MultiTaskNet, SharedLayer};

/// Identity of one shareable weight matrix: which tree, which edge, and the
/// dimensions it was sized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BankKey {
    /// 0 for the shared tree, `h + 1` for head `h`.
    pub tree: usize,
    pub from: Node,
    pub to: Node,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Weights shared by every architecture sampled from one search space.
///
/// A materialized net holds copies; [`WeightBank::commit`] writes trained
/// copies back so later samples of the same edge start from them.
#[derive(Debug, Clone)]
pub struct WeightBank {
    seed: u64,
    init_std: f64,
    entries: HashMap<BankKey, Dense<f32>>,
}

/// A net built from bank weights, with the key of every layer in canonical
/// order (shared, then each head).
#[derive(Debug, Clone)]
pub struct Materialized {
    pub net: MultiTaskNet,
    pub keys: Vec<BankKey>,
}

impl WeightBank {
    pub fn new(seed: u64, init_std: f64) -> Self {
        Self {
            seed,
            init_std,
            entries: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Initial weights depend only on the bank seed and the key, so creation
    /// order never changes results.
    fn entry(&mut self, key: BankKey, activation: Activation) -> &Dense<f32> {
        let (seed, std) = (self.seed, self.init_std);
        self.entries.entry(key).or_insert_with(|| {
            let digest = Sha256::digest(format!("{seed}:{key:?}").as_bytes());
            let mut rng = ChaCha8Rng::from_seed(digest.into());
            Dense::normal(
                LayerSpec {
                    in_dim: key.in_dim,
                    out_dim: key.out_dim,
                    activation,
                },
                std,
                &mut rng,
            )
        })
    }

    pub fn get(&self, key: &BankKey) -> Option<&Dense<f32>> {
        self.entries.get(key)
    }

    /// Builds the active sub-graph of `arch`. Inactive slots are skipped.
    pub fn materialize(
        &mut self,
        arch: &ArchSpec,
        featurizer: &KeyFeaturizer,
        cardinalities: &[u32],
    ) -> Result<Materialized> {
        let active = arch.active_shared();
        let node_of = |slot: usize| active.iter().position(|&s| s == slot).map(|p| p + 1).unwrap_or(0);
        let dim_of = |node: Node| match node {
            Node::Input => featurizer.width(),
            Node::Shared(s) => arch.shared[s].size,
            _ => unreachable!("shared slots read the input or shared slots"),
        };
        let mut keys = Vec::new();
        let mut shared = Vec::with_capacity(active.len());
        for &s in &active {
            let slot = arch.shared[s];
            let key = BankKey {
                tree: 0,
                from: slot.pred,
                to: Node::Shared(s),
                in_dim: dim_of(slot.pred),
                out_dim: slot.size,
            };
            let parent = match slot.pred {
                Node::Shared(p) => node_of(p),
                _ => 0,
            };
            shared.push(SharedLayer {
                parent,
                dense: self.entry(key, Activation::Relu).clone(),
            });
            keys.push(key);
        }
        let mut heads = Vec::with_capacity(cardinalities.len());
        for (h, &card) in cardinalities.iter().enumerate() {
            let path = arch.head_path(h);
            let slots = &arch.private[h];
            let mut layers = Vec::new();
            let mut dim = arch.shared[path.tap].size;
            for &p in &path.private {
                let key = BankKey {
                    tree: h + 1,
                    from: slots[p].pred,
                    to: Node::Private(p),
                    in_dim: dim,
                    out_dim: slots[p].size,
                };
                layers.push(self.entry(key, Activation::Relu).clone());
                keys.push(key);
                dim = slots[p].size;
            }
            let key = BankKey {
                tree: h + 1,
                from: Node::Private(slots.len() - 1),
                to: Node::Output,
                in_dim: dim,
                out_dim: card as usize,
            };
            layers.push(self.entry(key, Activation::None).clone());
            keys.push(key);
            heads.push(Head {
                tap: node_of(path.tap),
                layers,
            });
        }
        let net = MultiTaskNet::new(featurizer.clone(), shared, heads)?;
        Ok(Materialized { net, keys })
    }

    /// Writes trained layers back into the bank.
    pub fn commit(&mut self, m: &Materialized) {
        for (layer, key) in m.net.layers().zip(&m.keys) {
            self.entries.insert(*key, layer.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{train_on, TrainConfig};

    fn featurizer() -> KeyFeaturizer {
        KeyFeaturizer::new(&[256], 4).unwrap()
    }

    #[test]
    fn shared_edges_reuse_weights() {
        let mut bank = WeightBank::new(7, 0.05);
        let a: ArchSpec = "in/8,s0/16|pi/4,p0/8".parse().unwrap();
        let b: ArchSpec = "in/8,s0/16|pi/4,s0/8".parse().unwrap();
        let ma = bank.materialize(&a, &featurizer(), &[3]).unwrap();
        let mb = bank.materialize(&b, &featurizer(), &[3]).unwrap();
        // b's head branches off shared slot 0, leaving slot 1 inactive.
        assert_eq!(ma.net.shared.len(), 2);
        assert_eq!(mb.net.shared.len(), 1);
        assert_eq!((ma.net.heads[0].tap, mb.net.heads[0].tap), (2, 1));
        assert_eq!(ma.keys[0], mb.keys[0]);
        assert_eq!(ma.net.shared[0].dense, mb.net.shared[0].dense);
        assert_eq!(bank.len(), 2 + 2 + 1 + 1);
        let a_again = bank.materialize(&a, &featurizer(), &[3]).unwrap();
        assert_eq!(a_again.net, ma.net);
    }

    #[test]
    fn training_persists_through_commit() {
        let mut bank = WeightBank::new(1, 0.05);
        let arch: ArchSpec = "in/8,s0/8|pi/8,p0/8".parse().unwrap();
        let mut m = bank.materialize(&arch, &featurizer(), &[4]).unwrap();
        let before = m.net.clone();
        let keys: Vec<u64> = (0..256).collect();
        let codes: Vec<u32> = keys.iter().map(|k| (k % 4) as u32).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.01,
            ..Default::default()
        };
        train_on(&mut m.net, &keys, &[&codes], &cfg).unwrap();
        bank.commit(&m);
        let again = bank.materialize(&arch, &featurizer(), &[4]).unwrap();
        assert_eq!(again.net, m.net);
        assert_ne!(again.net.forward(&[5]).unwrap(), before.forward(&[5]).unwrap());
    }

    fn periodic_targets() -> (Vec<u64>, Vec<u32>) {
        let keys: Vec<u64> = (0..256).collect();
        let codes = keys.iter().map(|k| (k % 3) as u32).collect();
        (keys, codes)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 64,
            learning_rate: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn marker_survives_resampling() {
        let mut bank = WeightBank::new(4, 0.05);
        let arch: ArchSpec = "in/8,s0/8|pi/8,p0/8".parse().unwrap();
        let mut m = bank.materialize(&arch, &featurizer(), &[3]).unwrap();
        m.net.shared[0].dense.weights[5] = 123.25;
        bank.commit(&m);
        let other: ArchSpec = "in/8,in/16|pi/8,p0/8".parse().unwrap();
        bank.materialize(&other, &featurizer(), &[3]).unwrap();
        assert_eq!(bank.get(&m.keys[0]).unwrap().weights[5], 123.25);
        let again = bank.materialize(&arch, &featurizer(), &[3]).unwrap();
        assert_eq!(again.net.shared[0].dense.weights[5], 123.25);
    }

    #[test]
    fn shared_prefix_moves_with_training() {
        let mut bank = WeightBank::new(5, 0.05);
        let a: ArchSpec = "in/8,s0/8|pi/8,p0/8".parse().unwrap();
        let b: ArchSpec = "in/8,in/16|pi/4,s0/4".parse().unwrap();
        let b_before = bank.materialize(&b, &featurizer(), &[3]).unwrap();
        let mut ma = bank.materialize(&a, &featurizer(), &[3]).unwrap();
        let (keys, codes) = periodic_targets();
        train_on(&mut ma.net, &keys, &[&codes], &quick()).unwrap();
        bank.commit(&ma);
        let b_after = bank.materialize(&b, &featurizer(), &[3]).unwrap();
        // The edge input -> shared slot 0 is common; b's private layers are not.
        assert_eq!(b_after.keys[0], ma.keys[0]);
        assert_ne!(b_after.net.shared[0], b_before.net.shared[0]);
        assert_eq!(b_after.net.heads, b_before.net.heads);
    }

    #[test]
    fn disjoint_archs_are_isolated() {
        let mut bank = WeightBank::new(6, 0.05);
        let a: ArchSpec = "in/8,in/16|pi/8,p0/8".parse().unwrap();
        let b: ArchSpec = "in/16,in/8|pi/4,p0/4".parse().unwrap();
        let b_before = bank.materialize(&b, &featurizer(), &[3]).unwrap();
        let mut ma = bank.materialize(&a, &featurizer(), &[3]).unwrap();
        assert!(ma.keys.iter().all(|k| !b_before.keys.contains(k)));
        let (keys, codes) = periodic_targets();
        train_on(&mut ma.net, &keys, &[&codes], &quick()).unwrap();
        bank.commit(&ma);
        let b_after = bank.materialize(&b, &featurizer(), &[3]).unwrap();
        assert_eq!(b_after.net, b_before.net);
    }

    #[test]
    fn initial_weights_ignore_creation_order() {
        let a: ArchSpec = "in/8,in/16|pi/4,p0/8".parse().unwrap();
        let b: ArchSpec = "in/16,s0/8|pi/4,s0/8".parse().unwrap();
        let mut x = WeightBank::new(3, 0.05);
        let mut y = WeightBank::new(3, 0.05);
        x.materialize(&a, &featurizer(), &[2]).unwrap();
        let xb = x.materialize(&b, &featurizer(), &[2]).unwrap();
        let yb = y.materialize(&b, &featurizer(), &[2]).unwrap();
        assert_eq!(xb.net, yb.net);
    }
}
