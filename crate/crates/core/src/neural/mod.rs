//! Dense tensor kernels and the multi-task fully-connected network.
//!
//! Weights are stored and serialized as `f32`. Every kernel is generic over
//! [`Real`] so numerical checks can run the same code in `f64`.

mod blob;
mod featurize;
mod layer;
mod net;
mod train;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

pub use blob::{BLOB_MAGIC, BLOB_VERSION};
pub use featurize::{KeyFeaturizer, DEFAULT_RADIX};
pub use layer::{Activation, Dense, DenseGrad, LayerSpec};
pub use net::{Gradients, Head, MultiTaskNet, SharedLayer, INPUT_NODE};
pub use train::{accuracy, cross_entropy, train, train_on, Optimizer, TrainConfig, TrainOutcome, Trainer};

pub trait Real:
    num_traits::Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}
