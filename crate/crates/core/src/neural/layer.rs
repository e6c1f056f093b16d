use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Output layer; softmax is applied by the network.
    None,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::None => 0,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Activation::Relu),
            0 => Some(Activation::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Fully-connected layer. `weights` is `in_dim x out_dim`, row-major, so the
/// row for input feature `k` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseGrad<T> {
    pub fn zeros_like(layer: &Dense<T>) -> Self {
        Self {
            weights: vec![T::zero(); layer.weights.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(&self.bias)
    }
}

impl<T: Real> Dense<T> {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            in_dim: spec.in_dim,
            out_dim: spec.out_dim,
            activation: spec.activation,
            weights: vec![T::zero(); spec.in_dim * spec.out_dim],
            bias: vec![T::zero(); spec.out_dim],
        }
    }

    /// Weights drawn from N(0, std^2), zero bias.
    pub fn normal<R: Rng + ?Sized>(spec: LayerSpec, std: f64, rng: &mut R) -> Self {
        let mut layer = Self::zeros(spec);
        if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("positive std");
            for w in &mut layer.weights {
                *w = T::from_f64(dist.sample(rng));
            }
        }
        layer
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            activation: self.activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            activation: self.activation,
            weights: self.weights.iter().map(|w| U::from_f64(w.as_f64())).collect(),
            bias: self.bias.iter().map(|w| U::from_f64(w.as_f64())).collect(),
        }
    }

    fn activate(&self, out: &mut [T]) {
        if self.activation == Activation::Relu {
            for y in out {
                if *y < T::zero() {
                    *y = T::zero();
                }
            }
        }
    }

    /// `out = act(x W + b)` for `rows` dense input rows.
    pub fn forward_dense(&self, x: &[T], rows: usize, out: &mut Vec<T>) {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        debug_assert_eq!(x.len(), rows * n_in);
        out.clear();
        out.reserve(rows * n_out);
        for r in 0..rows {
            out.extend_from_slice(&self.bias);
            let orow = &mut out[r * n_out..];
            for (k, &a) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let wrow = &self.weights[k * n_out..(k + 1) * n_out];
                for (y, &w) in orow.iter_mut().zip(wrow) {
                    *y += a * w;
                }
            }
        }
        self.activate(out);
    }

    /// Forward over one-hot inputs given as `per_row` active indices per row.
    pub fn forward_sparse(&self, active: &[u32], per_row: usize, out: &mut Vec<T>) {
        let n_out = self.out_dim;
        let rows = active.len().checked_div(per_row).unwrap_or(0);
        out.clear();
        out.reserve(rows * n_out);
        for r in 0..rows {
            out.extend_from_slice(&self.bias);
            let orow = &mut out[r * n_out..];
            for &k in &active[r * per_row..(r + 1) * per_row] {
                let k = k as usize;
                let wrow = &self.weights[k * n_out..(k + 1) * n_out];
                for (y, &w) in orow.iter_mut().zip(wrow) {
                    *y += w;
                }
            }
        }
        self.activate(out);
    }

    /// Accumulates parameter gradients for dense input `x` and upstream `dy`
    /// (already through this layer's activation), and, if given, adds the
    /// input gradient into `dx` at positions where `x` is nonzero. Dense
    /// inputs are always relu outputs, so that mask is the relu derivative.
    pub fn backward_dense(&self, x: &[T], dy: &[T], rows: usize, grad: &mut DenseGrad<T>, mut dx: Option<&mut [T]>) {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            for (b, &d) in grad.bias.iter_mut().zip(dyr) {
                *b += d;
            }
            let xr = &x[r * n_in..(r + 1) * n_in];
            for (k, &a) in xr.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let gw = &mut grad.weights[k * n_out..(k + 1) * n_out];
                for (g, &d) in gw.iter_mut().zip(dyr) {
                    *g += a * d;
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let wrow = &self.weights[k * n_out..(k + 1) * n_out];
                    dx[r * n_in + k] += dot(wrow, dyr);
                }
            }
        }
    }

    pub fn backward_sparse(&self, active: &[u32], per_row: usize, dy: &[T], grad: &mut DenseGrad<T>) {
        let n_out = self.out_dim;
        let rows = active.len().checked_div(per_row).unwrap_or(0);
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            for (b, &d) in grad.bias.iter_mut().zip(dyr) {
                *b += d;
            }
            for &k in &active[r * per_row..(r + 1) * per_row] {
                let k = k as usize;
                let gw = &mut grad.weights[k * n_out..(k + 1) * n_out];
                for (g, &d) in gw.iter_mut().zip(dyr) {
                    *g += d;
                }
            }
        }
    }
}

/// Dot product with four independent accumulators, combined in fixed order.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
