//! Bagged CART regression forests, one ensemble per operator kind.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_pairs, PredictorMetrics};
use super::sampling::sample_vars;
use super::LatencySample;
use crate::error::{Error, Result};
use crate::graph::{OpConfig, OperatorKind};

/// What the trees regress on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScale {
    /// Latency in ms.
    Absolute,
    /// Latency divided by `1 + MFLOPs`; predictions are scaled back. Keeps
    /// leaf means comparable across configurations whose work differs by
    /// orders of magnitude.
    PerWork,
}

impl TargetScale {
    fn factor(self, cfg: &OpConfig) -> f64 {
        match self {
            TargetScale::Absolute => 1.0,
            TargetScale::PerWork => 1.0 + cfg.mflops(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub target: TargetScale,
    pub holdout_fraction: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 16,
            min_leaf: 2,
            max_features: None,
            target: TargetScale::PerWork,
            holdout_fraction: 0.2,
        }
    }
}

/// Regression features: the kind's sampled hyperparameters.
pub fn features(cfg: &OpConfig) -> Vec<f64> {
    sample_vars(cfg.kind).iter().map(|v| v.get(cfg) as f64).collect()
}

/// Mean that is exact for constant inputs.
fn stable_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let (mut acc, mut n) = (0.0, 0usize);
    for v in values {
        let f = *first.get_or_insert(v);
        acc += v - f;
        n += 1;
    }
    first.map_or(0.0, |f| f + acc / n as f64)
}

/// Flattened tree: node `i` is a leaf when `feature[i] < 0` and `value[i]`
/// is its prediction; otherwise `value[i]` is the split threshold and the
/// children sit at `left[i]` (`x <= threshold`) and `left[i] + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    feature: Vec<i16>,
    value: Vec<f64>,
    left: Vec<u32>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        while self.feature[i] >= 0 {
            let f = self.feature[i] as usize;
            i = self.left[i] as usize + usize::from(x[f] > self.value[i]);
        }
        self.value[i]
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                let l = t.left[i] as usize;
                1 + walk(t, l).max(walk(t, l + 1))
            }
        }
        walk(self, 0)
    }

    fn leaf(&mut self, slot: usize, v: f64) {
        self.feature[slot] = -1;
        self.value[slot] = v;
    }

    fn alloc(&mut self) -> usize {
        self.feature.push(-1);
        self.value.push(0.0);
        self.left.push(0);
        self.feature.len() - 1
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    order: Vec<(f64, u32)>,
}

impl Grower<'_> {
    fn grow(&mut self, tree: &mut Tree, slot: usize, idx: &mut [u32], depth: usize) {
        let mean = stable_mean(idx.iter().map(|&i| self.y[i as usize]));
        let min_leaf = self.params.min_leaf.max(1);
        let first = self.y[idx[0] as usize];
        let constant = idx.iter().all(|&i| self.y[i as usize] == first);
        if depth >= self.params.max_depth || idx.len() < 2 * min_leaf || constant {
            tree.leaf(slot, mean);
            return;
        }
        let d = self.x[0].len();
        let mut feats: Vec<usize> = (0..d).collect();
        feats.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in feats.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((score, thr)) = self.best_split(idx, f, min_leaf, mean) {
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, f, thr)) = best else {
            tree.leaf(slot, mean);
            return;
        };
        let mut lo = 0;
        for i in 0..idx.len() {
            if self.x[idx[i] as usize][f] <= thr {
                idx.swap(i, lo);
                lo += 1;
            }
        }
        let l = tree.alloc();
        tree.alloc();
        tree.feature[slot] = f as i16;
        tree.value[slot] = thr;
        tree.left[slot] = l as u32;
        let (left, right) = idx.split_at_mut(lo);
        self.grow(tree, l, left, depth + 1);
        self.grow(tree, l + 1, right, depth + 1);
    }

    /// Best variance-reducing threshold on feature `f`, as (score, threshold).
    /// The score is the reduction in squared error relative to the parent.
    fn best_split(&mut self, idx: &[u32], f: usize, min_leaf: usize, mean: f64) -> Option<(f64, f64)> {
        self.order.clear();
        self.order.extend(idx.iter().map(|&i| (self.x[i as usize][f], i)));
        self.order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let n = self.order.len();
        if self.order[0].0 == self.order[n - 1].0 {
            return None;
        }
        // Centered sums keep the gain computation well conditioned.
        let total: f64 = self.order.iter().map(|&(_, i)| self.y[i as usize] - mean).sum();
        let mut left_sum = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for k in 0..n - 1 {
            left_sum += self.y[self.order[k].1 as usize] - mean;
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf || self.order[k].0 == self.order[k + 1].0 {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64
                - total * total / n as f64;
            if best.is_none_or(|b| score > b.0) {
                let thr = 0.5 * (self.order[k].0 + self.order[k + 1].0);
                // Midpoints can round onto the upper value; fall back to the lower.
                let thr = if thr < self.order[k + 1].0 { thr } else { self.order[k].0 };
                best = Some((score, thr));
            }
        }
        best.filter(|b| b.0 > 0.0)
    }
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (tree as u64).wrapping_mul(0xd1b5_4a32_d192_ed03) ^ 0x5851_f42d
}

/// Fits `params.n_trees` bootstrapped trees; identical output regardless of
/// thread scheduling.
pub fn fit_trees(x: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Vec<Tree> {
    let n = y.len();
    let d = x.first().map_or(1, Vec::len);
    let mtry = params.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d);
    (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, t));
            let mut idx: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n as u32)).collect();
            let mut tree = Tree { feature: Vec::new(), value: Vec::new(), left: Vec::new() };
            let root = tree.alloc();
            let mut grower = Grower { x, y, params, mtry, rng, order: Vec::with_capacity(n) };
            grower.grow(&mut tree, root, &mut idx, 0);
            tree
        })
        .collect()
}

/// Ensemble for one operator kind, with the holdout it was validated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindForest {
    pub kind: OperatorKind,
    pub params: ForestParams,
    pub seed: u64,
    pub n_train: usize,
    pub target_min: f64,
    pub target_max: f64,
    pub train_score: f64,
    pub trees: Vec<Tree>,
    pub holdout: Vec<LatencySample>,
    /// Training samples; kept in memory for supplementary retraining only.
    #[serde(skip)]
    pub train: Vec<LatencySample>,
}

impl KindForest {
    pub fn fit(
        kind: OperatorKind,
        train: Vec<LatencySample>,
        holdout: Vec<LatencySample>,
        params: &ForestParams,
        seed: u64,
    ) -> Result<Self> {
        if train.len() < 2 * params.min_leaf.max(1) {
            return Err(Error::InsufficientData(format!(
                "{kind}: {} training samples, need at least {}",
                train.len(),
                2 * params.min_leaf.max(1)
            )));
        }
        if params.n_trees == 0 {
            return Err(Error::invalid("forest needs at least one tree"));
        }
        if let Some(bad) = train.iter().chain(&holdout).find(|s| s.config.kind != kind) {
            return Err(Error::invalid(format!("{} sample in the {kind} training set", bad.config.kind)));
        }
        let x: Vec<Vec<f64>> = train.iter().map(|s| features(&s.config)).collect();
        let y: Vec<f64> = train.iter().map(|s| s.latency_ms / params.target.factor(&s.config)).collect();
        let trees = fit_trees(&x, &y, params, seed);
        let mut forest = KindForest {
            kind,
            params: params.clone(),
            seed,
            n_train: train.len(),
            target_min: y.iter().copied().fold(f64::INFINITY, f64::min),
            target_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            train_score: 0.0,
            trees,
            holdout,
            train: Vec::new(),
        };
        forest.train_score = forest.evaluate(&train)?.r2;
        forest.train = train;
        Ok(forest)
    }

    /// Prediction in the regression target space (see [`TargetScale`]).
    pub fn predict_target(&self, cfg: &OpConfig) -> f64 {
        let x = features(cfg);
        stable_mean(self.trees.iter().map(|t| t.predict(&x)))
    }

    pub fn predict(&self, cfg: &OpConfig) -> f64 {
        self.predict_target(cfg) * self.params.target.factor(cfg)
    }

    pub fn evaluate(&self, samples: &[LatencySample]) -> Result<PredictorMetrics> {
        let pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.latency_ms, self.predict(&s.config))).collect();
        evaluate_pairs(&pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub device_id: String,
    pub seed: u64,
    pub kinds: BTreeMap<OperatorKind, KindForest>,
}

impl ForestModel {
    pub fn predict(&self, cfg: &OpConfig) -> Result<f64> {
        self.kinds
            .get(&cfg.kind)
            .map(|f| f.predict(cfg))
            .ok_or(Error::UnsupportedOperator(cfg.kind))
    }

    pub fn kind(&self, kind: OperatorKind) -> Option<&KindForest> {
        self.kinds.get(&kind)
    }

    /// Holdout samples of every kind.
    pub fn holdout(&self) -> impl Iterator<Item = &LatencySample> {
        self.kinds.values().flat_map(|k| k.holdout.iter())
    }

    pub fn sample_count(&self) -> usize {
        self.kinds.values().map(|k| k.n_train + k.holdout.len()).sum()
    }
}

fn kind_seed(seed: u64, kind: OperatorKind) -> u64 {
    seed ^ (kind as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d)
}

/// Splits `samples` into train and holdout with a seeded shuffle, keeping at
/// least `min_train` samples for training.
pub fn split_holdout(
    mut samples: Vec<LatencySample>,
    fraction: f64,
    min_train: usize,
    seed: u64,
) -> (Vec<LatencySample>, Vec<LatencySample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let n = samples.len();
    let n_hold = ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(min_train));
    let holdout = samples.split_off(n - n_hold);
    (samples, holdout)
}

/// Trains one ensemble per operator kind present in `samples`.
pub fn train_forest(samples: &[LatencySample], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let mut by_kind: BTreeMap<OperatorKind, Vec<LatencySample>> = BTreeMap::new();
    for s in samples {
        by_kind.entry(s.config.kind).or_default().push(s.clone());
    }
    let min_train = 2 * params.min_leaf.max(1);
    let mut kinds = BTreeMap::new();
    for (kind, group) in by_kind {
        if group.len() < min_train {
            return Err(Error::InsufficientData(format!(
                "{kind}: {} samples, need at least {min_train}",
                group.len()
            )));
        }
        let kseed = kind_seed(seed, kind);
        let (train, holdout) = split_holdout(group, params.holdout_fraction, min_train, kseed);
        kinds.insert(kind, KindForest::fit(kind, train, holdout, params, kseed)?);
    }
    Ok(ForestModel { device_id: samples[0].device_id.clone(), seed, kinds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(cfg: OpConfig, latency_ms: f64) -> LatencySample {
        LatencySample { config: cfg, device_id: "d".into(), avail_mem_mb: 1e6, latency_ms }
    }

    fn small() -> ForestParams {
        ForestParams { n_trees: 10, ..ForestParams::default() }
    }

    #[test]
    fn constant_dataset_predicts_constant() {
        let params = ForestParams { target: TargetScale::Absolute, ..small() };
        let samples: Vec<_> = (1..60).map(|i| sample(OpConfig::fc(i, 2 * i), 0.1)).collect();
        let model = train_forest(&samples, &params, 3).unwrap();
        for s in &samples {
            assert_eq!(model.predict(&s.config).unwrap(), 0.1);
        }
    }

    #[test]
    fn one_sample_is_insufficient() {
        let samples = vec![sample(OpConfig::fc(3, 3), 1.0)];
        assert!(matches!(train_forest(&samples, &small(), 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn learns_a_step() {
        let params = ForestParams { target: TargetScale::Absolute, ..small() };
        let samples: Vec<_> = (1..200)
            .map(|i| sample(OpConfig::fc(i, 7), if i > 100 { 5.0 } else { 1.0 }))
            .collect();
        let model = train_forest(&samples, &params, 1).unwrap();
        assert!((model.predict(&OpConfig::fc(30, 7)).unwrap() - 1.0).abs() < 1e-9);
        assert!((model.predict(&OpConfig::fc(170, 7)).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_kind_is_unsupported() {
        let samples: Vec<_> = (1..20).map(|i| sample(OpConfig::fc(i, 7), i as f64)).collect();
        let model = train_forest(&samples, &small(), 1).unwrap();
        assert!(matches!(model.predict(&OpConfig::bn(4, 4)), Err(Error::UnsupportedOperator(OperatorKind::Bn))));
    }

    #[test]
    fn depth_is_capped() {
        let params = ForestParams { max_depth: 3, target: TargetScale::Absolute, ..small() };
        let samples: Vec<_> = (1..300).map(|i| sample(OpConfig::fc(i, 7), (i * i) as f64)).collect();
        let model = train_forest(&samples, &params, 1).unwrap();
        assert!(model.kinds[&OperatorKind::Fc].trees.iter().all(|t| t.depth() <= 3));
    }
}
