//! Multi-task hybrid architecture search: a controller samples sub-graphs of
//! a tree of DAGs, sampled nets share weights through a bank, and the reward
//! is the negated compression loss of the hybrid the net would produce.

mod bank;
mod controller;
mod space;

use std::io::Write;
use std::ops::Range;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bank::{BankKey, Materialized, WeightBank};
pub use controller::{Controller, Episode};
pub use space::{search_space_size, ArchSpec, HeadPath, Node, SearchSpace, Slot, DESK_SIZES, FULL_SIZES};

use crate::codec::{Codec, CodecId};
use crate::encoding::EncodedRelation;
use crate::error::{Error, Result};
use crate::hybrid::{HybridConfig, HybridMapping};
use crate::neural::{train_on, KeyFeaturizer, MultiTaskNet, Optimizer, TrainConfig, DEFAULT_RADIX};
use crate::store::push_row;

/// `(model + aux + exist + decode) / data`.
pub fn compression_loss(model: u64, aux: u64, exist: u64, decode: u64, data: u64) -> Result<f64> {
    if data == 0 {
        return Err(Error::ZeroData);
    }
    Ok((model + aux + exist + decode) as f64 / data as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Total search iterations.
    pub nt: usize,
    /// Model-training phases within `nt`.
    pub nm: usize,
    /// Controller phases within `nt`.
    pub nc: usize,
    /// Rows scored per controller step.
    pub controller_batch: usize,
    /// Cap on controller steps per phase; `None` runs a full epoch.
    pub controller_steps: Option<usize>,
    /// Minibatch size for shared-weight training and finetuning.
    pub model_batch: usize,
    /// Rows drawn for each model phase.
    pub model_rows: usize,
    pub m_epochs: usize,
    pub model_lr: f64,
    /// Applied once per model phase and once per finetune epoch.
    pub lr_decay: f64,
    pub finetune_epochs: usize,
    pub controller_lr: f64,
    pub controller_hidden: usize,
    pub init_std: f64,
    pub baseline_decay: f64,
    pub temperature: f64,
    /// Rows of the fixed window used to score model phases.
    pub eval_rows: usize,
    pub stop_delta: f64,
    pub radix: u32,
    pub codec: CodecId,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            nt: 2000,
            nm: 2000,
            nc: 40,
            controller_batch: 2048,
            controller_steps: None,
            model_batch: 16384,
            model_rows: 16384,
            m_epochs: 5,
            model_lr: 0.001,
            lr_decay: 0.999,
            finetune_epochs: 5,
            controller_lr: 0.00035,
            controller_hidden: 64,
            init_std: 0.05,
            baseline_decay: 0.95,
            temperature: 1.0,
            eval_rows: 16384,
            stop_delta: 1e-4,
            radix: DEFAULT_RADIX,
            codec: CodecId::Zstd,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// A budget that finishes in seconds to minutes on one core.
    pub fn desk() -> Self {
        Self {
            nt: 200,
            nm: 20,
            nc: 4,
            controller_steps: Some(32),
            model_batch: 256,
            model_rows: 8192,
            m_epochs: 2,
            model_lr: 0.01,
            finetune_epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.nt == 0 || self.nm == 0 || self.nc == 0 {
            return bad("nt, nm and nc must be positive");
        }
        if self.nm < self.nc {
            return bad("nm must be at least nc");
        }
        if self.nm > self.nt {
            return bad("nm must not exceed nt");
        }
        if self.controller_batch == 0 || self.model_batch == 0 || self.model_rows == 0 || self.eval_rows == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.model_lr > 0.0 && self.controller_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline_decay must be in [0, 1)");
        }
        Ok(())
    }

    pub fn model_period(&self) -> usize {
        (self.nt / self.nm).max(1)
    }

    pub fn controller_period(&self) -> usize {
        (self.nt / self.nc).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Model,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub arch_id: String,
    pub loss: f64,
    /// Lowest model-phase loss so far; nonincreasing.
    pub best_loss: f64,
    pub phase: Phase,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub arch: ArchSpec,
    pub net: MultiTaskNet,
    pub trace: Vec<TraceRow>,
    /// Best model-phase loss estimate.
    pub best_loss: f64,
    /// Exact loss of the hybrid built from the finetuned net.
    pub final_loss: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
    /// Controller cell description, kept with the trace.
    pub controller: String,
}

/// Scores nets by the compression loss of the hybrid they would produce.
/// Aux bytes are estimated from a contiguous key window and scaled up.
struct Evaluator<'a> {
    data: &'a EncodedRelation,
    codec: Codec,
    fixed_bytes: u64,
    data_bytes: u64,
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a EncodedRelation, codec: CodecId) -> Self {
        let exist = crate::hybrid::ExistenceBitVector::from_keys(&data.keys).serialized_size();
        Self {
            data,
            codec: Codec::new(codec).for_rows(data.n_values()),
            fixed_bytes: exist + data.decode_map().serialized_size(),
            data_bytes: data.fixed_width_bytes(),
        }
    }

    fn estimate(&self, net: &MultiTaskNet, window: Range<usize>) -> Result<f64> {
        let keys = &self.data.keys[window.clone()];
        let preds = net.predict(keys)?;
        let mut rows = Vec::new();
        for (i, row) in window.clone().enumerate() {
            if preds.iter().zip(&self.data.columns).any(|(p, c)| p[i] != c[row]) {
                push_row(&mut rows, keys[i], &self.data.row_codes(row));
            }
        }
        let compressed = if rows.is_empty() {
            0
        } else {
            self.codec.compress(&rows)?.len() as u64
        };
        let scale = self.data.len() as f64 / window.len() as f64;
        let aux = 8 + (compressed as f64 * scale).round() as u64;
        compression_loss(net.serialized_size(), aux, self.fixed_bytes, 0, self.data_bytes)
    }
}

fn window_of(start: usize, len: usize, n: usize) -> Range<usize> {
    start..(start + len).min(n)
}

/// Searches `space` for the net minimizing the hybrid's compression loss,
/// then finetunes the best architecture on all of `data`.
pub fn mhas_search(data: &EncodedRelation, space: &SearchSpace, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let data = data.sorted_by_key();
    let space = SearchSpace {
        heads: data.n_values(),
        ..space.clone()
    };
    space.validate()?;
    let cards = data.cardinalities();
    let featurizer = KeyFeaturizer::new(&data.key_codec.spans(), cfg.radix)?;
    let targets: Vec<&[u32]> = data.columns.iter().map(Vec::as_slice).collect();
    let n = data.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut controller = Controller::new(
        &space,
        cfg.controller_hidden,
        cfg.init_std,
        cfg.controller_lr,
        cfg.baseline_decay,
        &mut rng,
    )?;
    controller.temperature = cfg.temperature;
    let mut bank = WeightBank::new(rng.gen(), cfg.init_std);
    let eval = Evaluator::new(&data, cfg.codec);
    let eval_window = window_of(rng.gen_range(0..=n.saturating_sub(cfg.eval_rows)), cfg.eval_rows, n);
    let mut windows: Vec<usize> = (0..n).step_by(cfg.controller_batch).collect();

    let mut trace = Vec::new();
    let mut best: Option<(f64, ArchSpec)> = None;
    let mut prev_phase_loss: Option<f64> = None;
    let mut lr = cfg.model_lr;
    let mut iterations_run = 0;
    let mut stopped_early = false;
    let mut batch_keys = Vec::with_capacity(cfg.model_rows);
    let mut batch_targets: Vec<Vec<u32>> = vec![Vec::new(); cards.len()];

    for it in 1..=cfg.nt {
        iterations_run = it;
        if it % cfg.model_period() == 0 {
            let (arch, _) = controller.sample(&mut rng);
            let mut m = bank.materialize(&arch, &featurizer, &cards)?;
            let rows = index::sample(&mut rng, n, cfg.model_rows.min(n));
            batch_keys.clear();
            batch_keys.extend(rows.iter().map(|i| data.keys[i]));
            for (bt, col) in batch_targets.iter_mut().zip(&data.columns) {
                bt.clear();
                bt.extend(rows.iter().map(|i| col[i]));
            }
            let refs: Vec<&[u32]> = batch_targets.iter().map(Vec::as_slice).collect();
            let train_cfg = TrainConfig {
                learning_rate: lr,
                lr_decay: 1.0,
                epochs: cfg.m_epochs,
                batch_size: cfg.model_batch,
                seed: rng.gen(),
                stop_delta: 0.0,
                optimizer: Optimizer::Adam,
            };
            if cfg.m_epochs > 0 {
                train_on(&mut m.net, &batch_keys, &refs, &train_cfg)?;
            }
            lr *= cfg.lr_decay;
            bank.commit(&m);
            let loss = eval.estimate(&m.net, eval_window.clone())?;
            if best.as_ref().is_none_or(|b| loss < b.0) {
                best = Some((loss, arch.clone()));
            }
            trace.push(TraceRow {
                iteration: it,
                arch_id: arch.id(),
                loss,
                best_loss: best.as_ref().map_or(loss, |b| b.0),
                phase: Phase::Model,
            });
        }
        if it % cfg.controller_period() == 0 {
            windows.shuffle(&mut rng);
            let steps = cfg.controller_steps.unwrap_or(windows.len()).min(windows.len());
            let mut total = 0.0;
            let mut last = None;
            for &start in &windows[..steps] {
                let (arch, _) = controller.sample(&mut rng);
                let m = bank.materialize(&arch, &featurizer, &cards)?;
                let loss = eval.estimate(&m.net, window_of(start, cfg.controller_batch, n))?;
                controller.update(&[Episode {
                    arch: arch.clone(),
                    reward: -loss,
                }])?;
                total += loss;
                last = Some(arch);
            }
            let mean = total / steps.max(1) as f64;
            trace.push(TraceRow {
                iteration: it,
                arch_id: last.map(|a| a.id()).unwrap_or_default(),
                loss: mean,
                best_loss: best.as_ref().map_or(f64::INFINITY, |b| b.0),
                phase: Phase::Controller,
            });
            tracing::debug!(iteration = it, loss = mean, "controller phase");
            if prev_phase_loss.is_some_and(|p| (p - mean).abs() < cfg.stop_delta) {
                stopped_early = true;
                break;
            }
            prev_phase_loss = Some(mean);
        }
    }

    let (best_loss, arch) = match best {
        Some(b) => b,
        None => {
            let arch = controller.sample(&mut rng).0;
            (f64::INFINITY, arch)
        }
    };
    let mut m = bank.materialize(&arch, &featurizer, &cards)?;
    if cfg.finetune_epochs > 0 {
        let finetune = TrainConfig {
            learning_rate: cfg.model_lr,
            lr_decay: cfg.lr_decay,
            epochs: cfg.finetune_epochs,
            batch_size: cfg.model_batch,
            seed: rng.gen(),
            stop_delta: cfg.stop_delta,
            optimizer: Optimizer::Adam,
        };
        train_on(&mut m.net, &data.keys, &targets, &finetune)?;
    }
    let hybrid = HybridMapping::build(&data, m.net.clone(), HybridConfig::default().with_codec(cfg.codec))?;
    let s = hybrid.storage();
    let final_loss = compression_loss(s.model, s.aux, s.exist, s.decode, s.original)?;
    tracing::info!(arch = %arch, best_loss, final_loss, iterations_run, "search done");
    Ok(SearchOutcome {
        arch,
        net: m.net,
        trace,
        best_loss,
        final_loss,
        iterations_run,
        stopped_early,
        controller: format!("gated-recurrent hidden={}", cfg.controller_hidden),
    })
}

#[cfg(test)]
mod tests;
