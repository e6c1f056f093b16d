//! Autoregressive policy over architecture decisions: a gated recurrent cell
//! emits one predecessor or size choice per step, fed the previous choice.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::space::{ArchSpec, SearchSpace, Slot};
use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    /// Predecessor choice among the first `n` candidates.
    Pred(usize),
    Size,
}

/// One decision sequence with its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub arch: ArchSpec,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    wz: usize,
    uz: usize,
    bz: usize,
    wc: usize,
    uc: usize,
    bc: usize,
    wp: usize,
    bp: usize,
    ws: usize,
    bs: usize,
    len: usize,
}

impl Layout {
    fn new(vocab: usize, h: usize, n_pred: usize, n_size: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let emb = take(vocab * h);
        let wz = take(h * h);
        let uz = take(h * h);
        let bz = take(h);
        let wc = take(h * h);
        let uc = take(h * h);
        let bc = take(h);
        let wp = take(n_pred * h);
        let bp = take(n_pred);
        let ws = take(n_size * h);
        let bs = take(n_size);
        Self {
            emb,
            wz,
            uz,
            bz,
            wc,
            uc,
            bc,
            wp,
            bp,
            ws,
            bs,
            len: at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    space: SearchSpace,
    steps: Vec<Step>,
    hidden: usize,
    n_pred: usize,
    layout: Layout,
    params: Vec<f64>,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    baseline: Option<f64>,
    baseline_decay: f64,
    /// Sampling temperature; 0 picks the argmax.
    pub temperature: f64,
}

/// Activations of one unrolled sequence.
struct Trace {
    tokens: Vec<usize>,
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    choices: Vec<usize>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl Controller {
    pub fn new<R: Rng + ?Sized>(
        space: &SearchSpace,
        hidden: usize,
        init_std: f64,
        lr: f64,
        baseline_decay: f64,
        rng: &mut R,
    ) -> Result<Self> {
        space.validate()?;
        if hidden == 0 {
            return Err(Error::InvalidConfig("controller hidden size must be positive".into()));
        }
        let mut steps = Vec::with_capacity(space.decision_count());
        for i in 0..space.max_shared_layers {
            steps.extend([Step::Pred(i + 1), Step::Size]);
        }
        for _ in 0..space.heads {
            for j in 0..space.max_private_layers {
                steps.extend([Step::Pred(2 * j + 1), Step::Size]);
            }
        }
        let n_pred = space.max_candidates();
        let vocab = 1 + n_pred + space.layer_sizes.len();
        let layout = Layout::new(vocab, hidden, n_pred, space.layer_sizes.len());
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let params = (0..layout.len).map(|_| normal.sample(rng)).collect();
        Ok(Self {
            space: space.clone(),
            steps,
            hidden,
            n_pred,
            layout,
            params,
            lr,
            m: vec![0.0; layout.len],
            v: vec![0.0; layout.len],
            t: 0,
            baseline: None,
            baseline_decay,
            temperature: 1.0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    fn token(&self, step: Step, choice: usize) -> usize {
        match step {
            Step::Pred(_) => 1 + choice,
            Step::Size => 1 + self.n_pred + choice,
        }
    }

    /// One cell step from `h_prev` fed `token`; returns (h, z, c).
    fn cell(&self, token: usize, h_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (p, l, hd) = (&self.params, &self.layout, self.hidden);
        let x = &p[l.emb + token * hd..l.emb + (token + 1) * hd];
        let mut h = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for r in 0..hd {
            let mut az = p[l.bz + r];
            let mut ac = p[l.bc + r];
            for k in 0..hd {
                az += p[l.wz + r * hd + k] * x[k] + p[l.uz + r * hd + k] * h_prev[k];
                ac += p[l.wc + r * hd + k] * x[k] + p[l.uc + r * hd + k] * h_prev[k];
            }
            z[r] = sigmoid(az);
            c[r] = ac.tanh();
            h[r] = (1.0 - z[r]) * h_prev[r] + z[r] * c[r];
        }
        (h, z, c)
    }

    fn logits(&self, step: Step, h: &[f64]) -> Vec<f64> {
        let (p, l, hd) = (&self.params, &self.layout, self.hidden);
        let (w, b, n) = match step {
            Step::Pred(n) => (l.wp, l.bp, n),
            Step::Size => (l.ws, l.bs, self.space.layer_sizes.len()),
        };
        (0..n)
            .map(|r| p[b + r] + (0..hd).map(|k| p[w + r * hd + k] * h[k]).sum::<f64>())
            .collect()
    }

    /// Unrolls the policy. `pick` chooses each step from its probabilities.
    fn unroll(&self, mut pick: impl FnMut(usize, &[f64]) -> usize) -> Trace {
        let mut tr = Trace {
            tokens: Vec::with_capacity(self.steps.len()),
            h: vec![vec![0.0; self.hidden]],
            z: Vec::new(),
            c: Vec::new(),
            probs: Vec::new(),
            choices: Vec::new(),
        };
        let mut token = 0;
        for (t, &step) in self.steps.iter().enumerate() {
            let (h, z, c) = self.cell(token, &tr.h[t]);
            let probs = softmax(&self.logits(step, &h));
            let choice = pick(t, &probs);
            tr.tokens.push(token);
            tr.h.push(h);
            tr.z.push(z);
            tr.c.push(c);
            tr.probs.push(probs);
            tr.choices.push(choice);
            token = self.token(step, choice);
        }
        tr
    }

    fn log_prob_of(tr: &Trace) -> f64 {
        tr.probs.iter().zip(&tr.choices).map(|(p, &c)| p[c].ln()).sum()
    }

    fn decode(&self, choices: &[usize]) -> ArchSpec {
        let sizes = &self.space.layer_sizes;
        let mut it = choices.chunks(2);
        let shared = (0..self.space.max_shared_layers)
            .map(|i| {
                let d = it.next().expect("decision count");
                Slot {
                    pred: self.space.shared_candidates(i)[d[0]],
                    size: sizes[d[1]],
                }
            })
            .collect();
        let private = (0..self.space.heads)
            .map(|_| {
                (0..self.space.max_private_layers)
                    .map(|j| {
                        let d = it.next().expect("decision count");
                        Slot {
                            pred: self.space.private_candidates(j)[d[0]],
                            size: sizes[d[1]],
                        }
                    })
                    .collect()
            })
            .collect();
        ArchSpec { shared, private }
    }

    fn encode(&self, arch: &ArchSpec) -> Result<Vec<usize>> {
        arch.validate(&self.space)?;
        let size_index = |s: usize| self.space.layer_sizes.iter().position(|&x| x == s).expect("validated");
        let mut out = Vec::with_capacity(self.steps.len());
        for (i, slot) in arch.shared.iter().enumerate() {
            let cands = self.space.shared_candidates(i);
            out.push(cands.iter().position(|&n| n == slot.pred).expect("validated"));
            out.push(size_index(slot.size));
        }
        for head in &arch.private {
            for (j, slot) in head.iter().enumerate() {
                let cands = self.space.private_candidates(j);
                out.push(cands.iter().position(|&n| n == slot.pred).expect("validated"));
                out.push(size_index(slot.size));
            }
        }
        Ok(out)
    }

    /// Samples an architecture and its log-probability under the policy.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (ArchSpec, f64) {
        let temp = self.temperature;
        let tr = self.unroll(|_, probs| {
            if temp <= 0.0 {
                return probs
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &p)| if p > best.1 { (i, p) } else { best },
                    )
                    .0;
            }
            let weights: Vec<f64> = probs.iter().map(|p| p.powf(1.0 / temp)).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            weights.len() - 1
        });
        (self.decode(&tr.choices), Self::log_prob_of(&tr))
    }

    pub fn log_prob(&self, arch: &ArchSpec) -> Result<f64> {
        let choices = self.encode(arch)?;
        Ok(Self::log_prob_of(&self.unroll(|t, _| choices[t])))
    }

    /// Gradient of `log_prob(arch)` with respect to every parameter.
    pub fn log_prob_gradient(&self, arch: &ArchSpec) -> Result<(f64, Vec<f64>)> {
        let choices = self.encode(arch)?;
        let tr = self.unroll(|t, _| choices[t]);
        let (p, l, hd) = (&self.params, &self.layout, self.hidden);
        let mut g = vec![0.0; l.len];
        let mut dh_next = vec![0.0; hd];
        for t in (0..self.steps.len()).rev() {
            let h = &tr.h[t + 1];
            let h_prev = &tr.h[t];
            let mut dh = dh_next.clone();
            let (w, b) = match self.steps[t] {
                Step::Pred(_) => (l.wp, l.bp),
                Step::Size => (l.ws, l.bs),
            };
            for (r, &pr) in tr.probs[t].iter().enumerate() {
                let d = if r == tr.choices[t] { 1.0 } else { 0.0 } - pr;
                g[b + r] += d;
                for k in 0..hd {
                    g[w + r * hd + k] += d * h[k];
                    dh[k] += d * p[w + r * hd + k];
                }
            }
            let (z, c) = (&tr.z[t], &tr.c[t]);
            let x_off = l.emb + tr.tokens[t] * hd;
            dh_next = vec![0.0; hd];
            for r in 0..hd {
                let daz = dh[r] * (c[r] - h_prev[r]) * z[r] * (1.0 - z[r]);
                let dac = dh[r] * z[r] * (1.0 - c[r] * c[r]);
                dh_next[r] += dh[r] * (1.0 - z[r]);
                g[l.bz + r] += daz;
                g[l.bc + r] += dac;
                for k in 0..hd {
                    let x = p[x_off + k];
                    g[l.wz + r * hd + k] += daz * x;
                    g[l.uz + r * hd + k] += daz * h_prev[k];
                    g[l.wc + r * hd + k] += dac * x;
                    g[l.uc + r * hd + k] += dac * h_prev[k];
                    g[x_off + k] += daz * p[l.wz + r * hd + k] + dac * p[l.wc + r * hd + k];
                    dh_next[k] += daz * p[l.uz + r * hd + k] + dac * p[l.uc + r * hd + k];
                }
            }
        }
        Ok((Self::log_prob_of(&tr), g))
    }

    /// One REINFORCE step with an exponential-moving-average baseline.
    /// Returns the mean advantage.
    pub fn update(&mut self, episodes: &[Episode]) -> Result<f64> {
        if episodes.is_empty() {
            return Ok(0.0);
        }
        let mean_reward = episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64;
        let baseline = *self.baseline.get_or_insert(mean_reward);
        let mut grad = vec![0.0; self.layout.len];
        let mut mean_adv = 0.0;
        for e in episodes {
            let adv = e.reward - baseline;
            mean_adv += adv;
            if adv == 0.0 {
                continue;
            }
            let (_, g) = self.log_prob_gradient(&e.arch)?;
            // Ascend adv * log p, so the minimized objective's gradient is negated.
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc -= adv * gi / episodes.len() as f64;
            }
        }
        self.adam(&grad);
        self.baseline = Some(self.baseline_decay * baseline + (1.0 - self.baseline_decay) * mean_reward);
        Ok(mean_adv / episodes.len() as f64)
    }

    fn adam(&mut self, grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..self.params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            self.params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}
