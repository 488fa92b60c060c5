//! Memory-pressure bias corrector: a two-layer ReLU network that maps an
//! operator's footprint and the available memory to a relative latency
//! inflation over the forest prediction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::ForestModel;
use super::LatencySample;
use crate::cost::{working_footprint_bytes, MB};
use crate::error::{Error, Result};
use crate::graph::OpConfig;

pub const INPUTS: usize = 3;

/// Relative residuals above this count as memory-inflated.
const INFLATED: f64 = 0.25;
/// Below this share of inflated samples the data carries no bias signal.
const MIN_INFLATED_SHARE: f64 = 0.01;
const RATIO_CAP: f64 = 16.0;
/// Unlimited budgets are read as this much memory.
const AVAIL_CAP_MB: f64 = 1e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Training uses at most this many samples (seeded subsample).
    pub max_samples: usize,
}

impl Default for BiasParams {
    fn default() -> Self {
        BiasParams { hidden: 16, epochs: 1500, learning_rate: 0.01, max_samples: 4096 }
    }
}

/// Raw inputs: log footprint, log available memory, capped memory ratio.
pub fn raw_inputs(cfg: &OpConfig, avail_mem_mb: f64) -> [f64; INPUTS] {
    let avail_mem_mb = avail_mem_mb.clamp(0.0, AVAIL_CAP_MB);
    let footprint = working_footprint_bytes(cfg) as f64 / MB;
    let ratio = if footprint > 0.0 { (avail_mem_mb / footprint).min(RATIO_CAP) } else { RATIO_CAP };
    [(1.0 + footprint).ln(), (1.0 + avail_mem_mb).ln(), ratio / RATIO_CAP]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub hidden: usize,
    /// Row-major `hidden x INPUTS`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub input_mean: [f64; INPUTS],
    pub input_std: [f64; INPUTS],
    /// Set when training data showed no memory inflation; the model is zero.
    pub degenerate: bool,
    pub n_samples: usize,
    pub seed: u64,
}

impl BiasModel {
    /// A model whose bias is identically zero.
    pub fn zero(hidden: usize) -> Self {
        BiasModel {
            hidden,
            w1: vec![0.0; hidden * INPUTS],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            input_mean: [0.0; INPUTS],
            input_std: [1.0; INPUTS],
            degenerate: false,
            n_samples: 0,
            seed: 0,
        }
    }

    fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        let mut m = BiasModel::zero(hidden);
        let a1 = (6.0 / INPUTS as f64).sqrt();
        let a2 = (6.0 / hidden as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
        m.b1.iter_mut().for_each(|b| *b = rng.gen_range(0.0..0.1));
        m.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..a2) * 0.1);
        m
    }

    pub fn normalize(&self, raw: &[f64; INPUTS]) -> [f64; INPUTS] {
        std::array::from_fn(|i| (raw[i] - self.input_mean[i]) / self.input_std[i])
    }

    fn forward(&self, x: &[f64; INPUTS], h: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for j in 0..self.hidden {
            let row = &self.w1[j * INPUTS..(j + 1) * INPUTS];
            let z = self.b1[j] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
            h[j] = z;
            out += self.w2[j] * z.max(0.0);
        }
        out
    }

    /// Predicted relative inflation (may be negative before clamping).
    pub fn relative(&self, cfg: &OpConfig, avail_mem_mb: f64) -> f64 {
        let x = self.normalize(&raw_inputs(cfg, avail_mem_mb));
        let mut h = vec![0.0; self.hidden];
        self.forward(&x, &mut h)
    }

    /// Non-negative latency bias in ms on top of `forest_ms`.
    pub fn bias_ms(&self, cfg: &OpConfig, avail_mem_mb: f64, forest_ms: f64) -> f64 {
        forest_ms * self.relative(cfg, avail_mem_mb).max(0.0)
    }

    pub fn param_count(&self) -> usize {
        self.hidden * (INPUTS + 2) + 1
    }

    /// Parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let h = self.hidden;
        assert_eq!(p.len(), self.param_count());
        self.w1.copy_from_slice(&p[..h * INPUTS]);
        self.b1.copy_from_slice(&p[h * INPUTS..h * (INPUTS + 1)]);
        self.w2.copy_from_slice(&p[h * (INPUTS + 1)..h * (INPUTS + 2)]);
        self.b2 = p[h * (INPUTS + 2)];
    }

    /// Mean squared error over normalized inputs and its gradient with
    /// respect to [`params`](Self::params).
    pub fn loss_and_grad(&self, xs: &[[f64; INPUTS]], ys: &[f64]) -> (f64, Vec<f64>) {
        let h = self.hidden;
        let n = xs.len() as f64;
        let mut grad = vec![0.0; self.param_count()];
        let mut z = vec![0.0; h];
        let mut loss = 0.0;
        let (gw1, rest) = grad.split_at_mut(h * INPUTS);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h);
        for (x, &y) in xs.iter().zip(ys) {
            let out = self.forward(x, &mut z);
            let err = out - y;
            loss += err * err;
            let d = 2.0 * err / n;
            gb2[0] += d;
            for j in 0..h {
                if z[j] > 0.0 {
                    gw2[j] += d * z[j];
                    let dz = d * self.w2[j];
                    gb1[j] += dz;
                    for i in 0..INPUTS {
                        gw1[j * INPUTS + i] += dz * x[i];
                    }
                }
            }
        }
        (loss / n, grad)
    }
}

/// Relative residual of each sample against the forest: `(truth - pred) / pred`.
pub fn relative_residuals(samples: &[LatencySample], forest: &ForestModel) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let pred = forest.predict(&s.config)?;
            Ok((s.latency_ms - pred) / pred.max(1e-12))
        })
        .collect()
}

/// Fits the bias network to relative residuals of swept-memory samples with
/// full-batch Adam. Returns a zero model flagged `degenerate` when the
/// samples show no memory inflation.
pub fn train_bias(
    samples: &[LatencySample],
    forest: &ForestModel,
    params: &BiasParams,
    seed: u64,
) -> Result<BiasModel> {
    if params.hidden == 0 {
        return Err(Error::invalid("bias model needs a hidden layer"));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples for the bias model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<&LatencySample> = samples.iter().collect();
    if chosen.len() > params.max_samples {
        chosen.shuffle(&mut rng);
        chosen.truncate(params.max_samples);
    }
    let owned: Vec<LatencySample> = chosen.into_iter().cloned().collect();
    let ys = relative_residuals(&owned, forest)?;
    // Forest error scatters both ways; memory pressure only inflates. Excess
    // of inflated over deflated samples is the bias signal.
    let inflated = ys.iter().filter(|&&r| r > INFLATED).count();
    let deflated = ys.iter().filter(|&&r| r < -INFLATED).count();
    if (inflated.saturating_sub(deflated) as f64) < MIN_INFLATED_SHARE * ys.len() as f64 {
        log::warn!(
            "bias targets are degenerate: {inflated} of {} samples show memory inflation; using a zero bias",
            ys.len()
        );
        let mut zero = BiasModel::zero(params.hidden);
        zero.degenerate = true;
        zero.n_samples = ys.len();
        zero.seed = seed;
        return Ok(zero);
    }
    let raw: Vec<[f64; INPUTS]> = owned.iter().map(|s| raw_inputs(&s.config, s.avail_mem_mb)).collect();
    let n = raw.len() as f64;
    let mut model = BiasModel::init(params.hidden, &mut rng);
    for i in 0..INPUTS {
        let mean = raw.iter().map(|r| r[i]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n;
        model.input_mean[i] = mean;
        model.input_std[i] = if var > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let xs: Vec<[f64; INPUTS]> = raw.iter().map(|r| model.normalize(r)).collect();
    let mut p = model.params();
    let (mut m, mut v) = (vec![0.0; p.len()], vec![0.0; p.len()]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for step in 1..=params.epochs {
        let (_, g) = model.loss_and_grad(&xs, &ys);
        let c1 = 1.0 - f64::powi(b1, step as i32);
        let c2 = 1.0 - f64::powi(b2, step as i32);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= params.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        model.set_params(&p);
    }
    model.n_samples = xs.len();
    model.seed = seed;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_has_zero_bias() {
        let m = BiasModel::zero(16);
        assert_eq!(m.bias_ms(&OpConfig::conv(64, 32, 32, 3, 1), 1.0, 10.0), 0.0);
    }

    #[test]
    fn param_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = BiasModel::init(4, &mut rng);
        let p = m.params();
        assert_eq!(p.len(), m.param_count());
        m.set_params(&p);
        assert_eq!(m.params(), p);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = BiasModel::init(16, &mut rng);
        let xs: Vec<[f64; INPUTS]> = (0..32).map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0))).collect();
        let ys: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..3.0)).collect();
        let (_, g) = m.loss_and_grad(&xs, &ys);
        let p = m.params();
        let h = 1e-6;
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..p.len() {
            let mut probe = m.clone();
            let mut q = p.clone();
            q[i] += h;
            probe.set_params(&q);
            let up = probe.loss_and_grad(&xs, &ys).0;
            q[i] -= 2.0 * h;
            probe.set_params(&q);
            let down = probe.loss_and_grad(&xs, &ys).0;
            let fd = (up - down) / (2.0 * h);
            diff += (fd - g[i]).powi(2);
            norm += g[i].powi(2).max(fd * fd);
        }
        assert!(diff.sqrt() / norm.sqrt() < 1e-4);
    }
}
