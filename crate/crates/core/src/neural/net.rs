use rand::Rng;

use super::featurize::KeyFeaturizer;
use super::layer::{Activation, Dense, DenseGrad, LayerSpec};
use super::{Matrix, Real};
use crate::error::{Error, Result};

/// Node id of the key input. Shared layer `i` is node `i + 1`.
pub const INPUT_NODE: usize = 0;

const PREDICT_CHUNK: usize = 4096;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SharedLayer<T> {
    /// Node feeding this layer; always an earlier node.
    pub parent: usize,
    pub dense: Dense<T>,
}

/// Private layers of one value column, ending in the softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    /// Node whose output feeds the first private layer.
    pub tap: usize,
    pub layers: Vec<Dense<T>>,
}

/// Multi-task network: a tree of shared relu layers rooted at the key input,
/// with one private head per value column.
///
/// The common layout is a chain of shared layers with every head reading the
/// last one; architecture search may also produce heads that branch off an
/// earlier shared layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskNet<T = f32> {
    pub featurizer: KeyFeaturizer,
    pub shared: Vec<SharedLayer<T>>,
    pub heads: Vec<Head<T>>,
}

/// Per-layer gradients in canonical layer order (shared, then each head).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<DenseGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

struct Pass<T> {
    rows: usize,
    active: Vec<u32>,
    per_row: usize,
    shared_out: Vec<Vec<T>>,
    /// Per head, output of every private layer; the last entry holds logits.
    head_out: Vec<Vec<Vec<T>>>,
}

impl<T: Real> MultiTaskNet<T> {
    pub fn new(featurizer: KeyFeaturizer, shared: Vec<SharedLayer<T>>, heads: Vec<Head<T>>) -> Result<Self> {
        let net = Self {
            featurizer,
            shared,
            heads,
        };
        net.validate()?;
        Ok(net)
    }

    /// Chain layout: `shared_sizes` relu layers, then per head `private_sizes`
    /// relu layers and an output layer of the head's cardinality.
    pub fn with_layout<R: Rng + ?Sized>(
        featurizer: KeyFeaturizer,
        shared_sizes: &[usize],
        private_sizes: &[usize],
        cardinalities: &[u32],
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut shared = Vec::with_capacity(shared_sizes.len());
        let mut dim = featurizer.width();
        for (i, &s) in shared_sizes.iter().enumerate() {
            shared.push(SharedLayer {
                parent: i,
                dense: Dense::normal(
                    LayerSpec {
                        in_dim: dim,
                        out_dim: s,
                        activation: Activation::Relu,
                    },
                    init_std,
                    rng,
                ),
            });
            dim = s;
        }
        let tap = shared_sizes.len();
        let heads = cardinalities
            .iter()
            .map(|&card| {
                let mut layers = Vec::new();
                let mut d = dim;
                for &p in private_sizes {
                    layers.push(Dense::normal(
                        LayerSpec {
                            in_dim: d,
                            out_dim: p,
                            activation: Activation::Relu,
                        },
                        init_std,
                        rng,
                    ));
                    d = p;
                }
                layers.push(Dense::normal(
                    LayerSpec {
                        in_dim: d,
                        out_dim: card as usize,
                        activation: Activation::None,
                    },
                    init_std,
                    rng,
                ));
                Head { tap, layers }
            })
            .collect();
        Self::new(featurizer, shared, heads)
    }

    pub fn node_dim(&self, node: usize) -> usize {
        if node == INPUT_NODE {
            self.featurizer.width()
        } else {
            self.shared[node - 1].dense.out_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.shared.iter().enumerate() {
            if s.parent > i {
                return Err(Error::DimensionMismatch(format!(
                    "shared layer {i} reads later node {}",
                    s.parent
                )));
            }
            check_layer(&s.dense, self.node_dim(s.parent), &format!("shared layer {i}"))?;
            if s.dense.activation != Activation::Relu {
                return Err(Error::DimensionMismatch(format!("shared layer {i} must be relu")));
            }
        }
        if self.heads.is_empty() {
            return Err(Error::DimensionMismatch("network has no heads".into()));
        }
        for (h, head) in self.heads.iter().enumerate() {
            if head.tap > self.shared.len() {
                return Err(Error::DimensionMismatch(format!(
                    "head {h} taps missing node {}",
                    head.tap
                )));
            }
            let Some(last) = head.layers.last() else {
                return Err(Error::DimensionMismatch(format!("head {h} has no layers")));
            };
            let mut dim = self.node_dim(head.tap);
            for (l, layer) in head.layers.iter().enumerate() {
                check_layer(layer, dim, &format!("head {h} layer {l}"))?;
                let want = if l + 1 == head.layers.len() {
                    Activation::None
                } else {
                    Activation::Relu
                };
                if layer.activation != want {
                    return Err(Error::DimensionMismatch(format!(
                        "head {h} layer {l} has activation {:?}",
                        layer.activation
                    )));
                }
                dim = layer.out_dim;
            }
            if last.out_dim == 0 {
                return Err(Error::DimensionMismatch(format!("head {h} has empty output")));
            }
        }
        Ok(())
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.heads
            .iter()
            .map(|h| h.layers.last().map_or(0, |l| l.out_dim as u32))
            .collect()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.shared
            .iter()
            .map(|s| &s.dense)
            .chain(self.heads.iter().flat_map(|h| h.layers.iter()))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.shared
            .iter_mut()
            .map(|s| &mut s.dense)
            .chain(self.heads.iter_mut().flat_map(|h| h.layers.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    pub fn cast<U: Real>(&self) -> MultiTaskNet<U> {
        MultiTaskNet {
            featurizer: self.featurizer.clone(),
            shared: self
                .shared
                .iter()
                .map(|s| SharedLayer {
                    parent: s.parent,
                    dense: s.dense.cast(),
                })
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    tap: h.tap,
                    layers: h.layers.iter().map(Dense::cast).collect(),
                })
                .collect(),
        }
    }

    fn run(&self, keys: &[u64]) -> Result<Pass<T>> {
        let per_row = self.featurizer.active_per_key();
        let mut active = Vec::with_capacity(keys.len() * per_row);
        for &k in keys {
            self.featurizer.push_active(k, &mut active)?;
        }
        let rows = keys.len();
        let mut shared_out: Vec<Vec<T>> = Vec::with_capacity(self.shared.len());
        for s in &self.shared {
            let mut out = Vec::new();
            if s.parent == INPUT_NODE {
                s.dense.forward_sparse(&active, per_row, &mut out);
            } else {
                s.dense.forward_dense(&shared_out[s.parent - 1], rows, &mut out);
            }
            shared_out.push(out);
        }
        let mut head_out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut outs: Vec<Vec<T>> = Vec::with_capacity(head.layers.len());
            for (l, layer) in head.layers.iter().enumerate() {
                let mut out = Vec::new();
                if l > 0 {
                    layer.forward_dense(&outs[l - 1], rows, &mut out);
                } else if head.tap == INPUT_NODE {
                    layer.forward_sparse(&active, per_row, &mut out);
                } else {
                    layer.forward_dense(&shared_out[head.tap - 1], rows, &mut out);
                }
                outs.push(out);
            }
            head_out.push(outs);
        }
        Ok(Pass {
            rows,
            active,
            per_row,
            shared_out,
            head_out,
        })
    }

    /// Per-head logits, one `keys.len() x cardinality` matrix each.
    pub fn logits(&self, keys: &[u64]) -> Result<Vec<Matrix<T>>> {
        let pass = self.run(keys)?;
        Ok(pass
            .head_out
            .into_iter()
            .zip(self.cardinalities())
            .map(|(mut outs, card)| Matrix {
                rows: keys.len(),
                cols: card as usize,
                data: outs.pop().unwrap_or_default(),
            })
            .collect())
    }

    /// Per-head row-stochastic probability matrices.
    pub fn forward(&self, keys: &[u64]) -> Result<Vec<Matrix<T>>> {
        let mut out = self.logits(keys)?;
        for m in &mut out {
            for r in 0..m.rows {
                softmax_in_place(&mut m.data[r * m.cols..(r + 1) * m.cols]);
            }
        }
        Ok(out)
    }

    /// Argmax code per head and key; the lowest code wins exact ties.
    pub fn predict(&self, keys: &[u64]) -> Result<Vec<Vec<u32>>> {
        let mut out: Vec<Vec<u32>> = vec![Vec::with_capacity(keys.len()); self.heads.len()];
        for chunk in keys.chunks(PREDICT_CHUNK) {
            for (h, m) in self.logits(chunk)?.into_iter().enumerate() {
                for r in 0..m.rows {
                    out[h].push(argmax(m.row(r)));
                }
            }
        }
        Ok(out)
    }

    /// Mean over rows of the summed per-head cross-entropy.
    pub fn loss(&self, keys: &[u64], targets: &[&[u32]]) -> Result<f64> {
        self.check_targets(keys, targets)?;
        let probs = self.forward(keys)?;
        Ok(probs
            .iter()
            .zip(targets)
            .map(|(p, t)| cross_entropy_sum(p, t))
            .sum::<f64>()
            / keys.len().max(1) as f64)
    }

    fn check_targets(&self, keys: &[u64], targets: &[&[u32]]) -> Result<()> {
        if targets.len() != self.heads.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} target columns for {} heads",
                targets.len(),
                self.heads.len()
            )));
        }
        for (t, card) in targets.iter().zip(self.cardinalities()) {
            if t.len() != keys.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} targets for {} keys",
                    t.len(),
                    keys.len()
                )));
            }
            if let Some(&code) = t.iter().find(|&&c| c >= card) {
                return Err(Error::CodeOutOfRange {
                    code,
                    cardinality: card,
                });
            }
        }
        Ok(())
    }

    /// Loss and exact gradients of the mean summed cross-entropy.
    pub fn loss_and_gradients(&self, keys: &[u64], targets: &[&[u32]]) -> Result<(f64, Gradients<T>)> {
        if keys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_targets(keys, targets)?;
        let mut pass = self.run(keys)?;
        let rows = pass.rows;
        let scale = T::from_f64(1.0 / rows as f64);
        let mut grads: Vec<DenseGrad<T>> = self.layers().map(DenseGrad::zeros_like).collect();
        let mut d_shared: Vec<Vec<T>> = self
            .shared
            .iter()
            .map(|s| vec![T::zero(); rows * s.dense.out_dim])
            .collect();
        let mut loss = 0.0;
        let mut g_index = self.shared.len();

        for (h, head) in self.heads.iter().enumerate() {
            let outs = &mut pass.head_out[h];
            let logits = outs.last_mut().expect("validated head");
            let card = head.layers.last().expect("validated head").out_dim;
            // logits become d loss / d logits
            for r in 0..rows {
                let row = &mut logits[r * card..(r + 1) * card];
                softmax_in_place(row);
                let t = targets[h][r] as usize;
                loss -= row[t].as_f64().max(PROB_FLOOR).ln();
                row[t] -= T::one();
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            let mut d_out = std::mem::take(logits);
            let base = g_index;
            for l in (0..head.layers.len()).rev() {
                let layer = &head.layers[l];
                let grad = &mut grads[base + l];
                if l > 0 {
                    let mut d_in = vec![T::zero(); rows * layer.in_dim];
                    layer.backward_dense(&outs[l - 1], &d_out, rows, grad, Some(&mut d_in));
                    d_out = d_in;
                } else if head.tap == INPUT_NODE {
                    layer.backward_sparse(&pass.active, pass.per_row, &d_out, grad);
                } else {
                    let t = head.tap - 1;
                    layer.backward_dense(&pass.shared_out[t], &d_out, rows, grad, Some(&mut d_shared[t]));
                }
            }
            g_index += head.layers.len();
        }

        for i in (0..self.shared.len()).rev() {
            let s = &self.shared[i];
            let (lower, upper) = d_shared.split_at_mut(i);
            let d_out = &upper[0];
            if s.parent == INPUT_NODE {
                s.dense
                    .backward_sparse(&pass.active, pass.per_row, d_out, &mut grads[i]);
            } else {
                let p = s.parent - 1;
                s.dense
                    .backward_dense(&pass.shared_out[p], d_out, rows, &mut grads[i], Some(&mut lower[p]));
            }
        }
        Ok((loss / rows as f64, Gradients { layers: grads }))
    }
}

fn check_layer<T>(layer: &Dense<T>, in_dim: usize, what: &str) -> Result<()> {
    if layer.in_dim != in_dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} expects {} inputs, fed {in_dim}",
            layer.in_dim
        )));
    }
    if layer.in_dim == 0 || layer.out_dim == 0 {
        return Err(Error::DimensionMismatch(format!("{what} has a zero dimension")));
    }
    if layer.weights.len() != layer.in_dim * layer.out_dim || layer.bias.len() != layer.out_dim {
        return Err(Error::DimensionMismatch(format!("{what} has mis-sized parameters")));
    }
    Ok(())
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

pub(crate) fn cross_entropy_sum<T: Real>(p: &Matrix<T>, targets: &[u32]) -> f64 {
    (0..p.rows)
        .map(|r| -p.row(r)[targets[r] as usize].as_f64().max(PROB_FLOOR).ln())
        .sum()
}
