use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{cross_entropy_sum, Gradients, MultiTaskNet};
use super::{Matrix, Real};
use crate::encoding::EncodedRelation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the epoch loss changes by less than this.
    pub stop_delta: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            lr_decay: 0.999,
            epochs: 5,
            batch_size: 16384,
            seed: 0,
            stop_delta: 1e-4,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("lr_decay must be in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub loss_history: Vec<f64>,
    /// Fraction of rows where every head is correct.
    pub accuracy: f64,
    pub head_accuracy: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state bound to one network's parameter layout.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    optimizer: Optimizer,
    lr: f64,
    lr_decay: f64,
    step: i32,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            optimizer: cfg.optimizer,
            lr: cfg.learning_rate,
            lr_decay: cfg.lr_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn decay(&mut self) {
        self.lr *= self.lr_decay;
    }

    pub fn apply(&mut self, net: &mut MultiTaskNet<T>, grads: &Gradients<T>) {
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd => {
                let lr = T::from_f64(self.lr);
                for (layer, g) in net.layers_mut().zip(&grads.layers) {
                    for (w, &d) in layer.weights.iter_mut().zip(&g.weights) {
                        *w -= lr * d;
                    }
                    for (b, &d) in layer.bias.iter_mut().zip(&g.bias) {
                        *b -= lr * d;
                    }
                }
            }
            Optimizer::Adam => {
                if self.moments.is_empty() {
                    self.moments = grads
                        .layers
                        .iter()
                        .map(|g| {
                            let n = g.weights.len() + g.bias.len();
                            (vec![T::zero(); n], vec![T::zero(); n])
                        })
                        .collect();
                }
                let b1 = T::from_f64(ADAM_BETA1);
                let b2 = T::from_f64(ADAM_BETA2);
                let c1 = T::one() - b1;
                let c2 = T::one() - b2;
                // bias correction folded into the step size
                let step_size =
                    self.lr * (1.0 - ADAM_BETA2.powi(self.step)).sqrt() / (1.0 - ADAM_BETA1.powi(self.step));
                let step_size = T::from_f64(step_size);
                let eps = T::from_f64(ADAM_EPS);
                for ((layer, g), (m, v)) in net.layers_mut().zip(&grads.layers).zip(&mut self.moments) {
                    let params = layer.weights.iter_mut().chain(layer.bias.iter_mut());
                    let grads = g.weights.iter().chain(&g.bias);
                    for (((p, &d), mi), vi) in params.zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                        if d == T::zero() && *mi == T::zero() {
                            continue;
                        }
                        *mi = b1 * *mi + c1 * d;
                        *vi = b2 * *vi + c2 * d * d;
                        *p -= step_size * *mi / (vi.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Mean of `-ln p[i, target_i]`, probabilities clamped below at 1e-12.
pub fn cross_entropy<T: Real>(probabilities: &Matrix<T>, targets: &[u32]) -> Result<f64> {
    if targets.len() != probabilities.rows {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            targets.len(),
            probabilities.rows
        )));
    }
    if let Some(&code) = targets.iter().find(|&&t| t as usize >= probabilities.cols) {
        return Err(Error::CodeOutOfRange {
            code,
            cardinality: probabilities.cols as u32,
        });
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    Ok(cross_entropy_sum(probabilities, targets) / targets.len() as f64)
}

/// All-heads-correct accuracy and per-head accuracy.
pub fn accuracy<T: Real>(net: &MultiTaskNet<T>, keys: &[u64], targets: &[&[u32]]) -> Result<(f64, Vec<f64>)> {
    if keys.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = net.predict(keys)?;
    let n = keys.len() as f64;
    let head_accuracy = pred
        .iter()
        .zip(targets)
        .map(|(p, t)| p.iter().zip(*t).filter(|(a, b)| a == b).count() as f64 / n)
        .collect();
    let all = (0..keys.len())
        .filter(|&i| pred.iter().zip(targets).all(|(p, t)| p[i] == t[i]))
        .count() as f64
        / n;
    Ok((all, head_accuracy))
}

/// Mini-batch training on summed per-head cross-entropy.
pub fn train_on<T: Real>(
    net: &mut MultiTaskNet<T>,
    keys: &[u64],
    targets: &[&[u32]],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if keys.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if targets.len() != net.heads.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} value columns for {} heads",
            targets.len(),
            net.heads.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(cfg);
    let mut order: Vec<usize> = (0..keys.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_keys = Vec::with_capacity(cfg.batch_size);
    let mut batch_targets: Vec<Vec<u32>> = vec![Vec::with_capacity(cfg.batch_size); targets.len()];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_keys.clear();
            batch_keys.extend(chunk.iter().map(|&i| keys[i]));
            for (bt, t) in batch_targets.iter_mut().zip(targets) {
                bt.clear();
                bt.extend(chunk.iter().map(|&i| t[i]));
            }
            let refs: Vec<&[u32]> = batch_targets.iter().map(Vec::as_slice).collect();
            let (loss, grads) = net.loss_and_gradients(&batch_keys, &refs)?;
            trainer.apply(net, &grads);
            total += loss * chunk.len() as f64;
        }
        let epoch_loss = total / keys.len() as f64;
        tracing::debug!(epoch, loss = epoch_loss, lr = trainer.learning_rate(), "epoch done");
        trainer.decay();
        let prev = history.last().copied();
        history.push(epoch_loss);
        if prev.is_some_and(|p: f64| (p - epoch_loss).abs() < cfg.stop_delta) {
            break;
        }
    }
    let (accuracy, head_accuracy) = accuracy(net, keys, targets)?;
    Ok(TrainOutcome {
        epochs_run: history.len(),
        loss_history: history,
        accuracy,
        head_accuracy,
    })
}

pub fn train<T: Real>(net: &mut MultiTaskNet<T>, data: &EncodedRelation, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.n_values() != net.heads.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} value columns for {} heads",
            data.n_values(),
            net.heads.len()
        )));
    }
    let targets: Vec<&[u32]> = data.columns.iter().map(Vec::as_slice).collect();
    train_on(net, &data.keys, &targets, cfg)
}
