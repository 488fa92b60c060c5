//! Operator sampling spaces and stratified sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{OpConfig, OperatorKind, KERNEL_SIZES, SAMPLE_DIM_MAX, STRIDES};

/// Number of equal-width bins per continuous variable when stratifying.
pub const SAMPLE_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleVar {
    Hw,
    Cin,
    Cout,
    KS,
    S,
}

impl SampleVar {
    pub fn is_discrete(self) -> bool {
        matches!(self, SampleVar::KS | SampleVar::S)
    }

    pub fn get(self, cfg: &OpConfig) -> u32 {
        match self {
            SampleVar::Hw => cfg.hw,
            SampleVar::Cin => cfg.cin,
            SampleVar::Cout => cfg.cout,
            SampleVar::KS => cfg.k_s,
            SampleVar::S => cfg.s,
        }
    }

    fn values(self) -> &'static [u32] {
        match self {
            SampleVar::KS => &KERNEL_SIZES,
            SampleVar::S => &STRIDES,
            _ => &[],
        }
    }
}

/// Hyperparameters that vary when profiling `kind`.
pub fn sample_vars(kind: OperatorKind) -> &'static [SampleVar] {
    use SampleVar::*;
    match kind {
        OperatorKind::Conv => &[Hw, KS, Cin, Cout, S],
        OperatorKind::Fc => &[Cin, Cout],
        OperatorKind::MaxPool | OperatorKind::AvgPool => &[Hw, Cin, KS, S],
        OperatorKind::Bn | OperatorKind::Add | OperatorKind::Concat | OperatorKind::Identity => &[Hw, Cin],
    }
}

/// Default sample count per kind. The structural kinds have tiny, nearly
/// linear cost surfaces and get small budgets.
pub fn default_budget(kind: OperatorKind) -> usize {
    match kind {
        OperatorKind::Conv => 12799,
        OperatorKind::Fc => 121,
        OperatorKind::Bn => 464,
        OperatorKind::MaxPool | OperatorKind::AvgPool => 960,
        OperatorKind::Add | OperatorKind::Concat => 256,
        OperatorKind::Identity => 64,
    }
}

/// Axis-aligned box of a kind's sample space; discrete variables are pinned
/// to one value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub kind: OperatorKind,
    pub bounds: Vec<(SampleVar, u32, u32)>,
}

impl Region {
    fn bound(&self, var: SampleVar) -> Option<(u32, u32)> {
        self.bounds.iter().find(|b| b.0 == var).map(|b| (b.1, b.2))
    }

    pub fn contains(&self, cfg: &OpConfig) -> bool {
        cfg.kind == self.kind
            && self.bounds.iter().all(|&(v, lo, hi)| (lo..=hi).contains(&v.get(cfg)))
    }

    fn hw_range(&self) -> Option<(u32, u32)> {
        let (lo, hi) = self.bound(SampleVar::Hw)?;
        let k = self.bound(SampleVar::KS).map_or(1, |b| b.0);
        Some((lo.max(k), hi))
    }

    /// False when no valid operator lies inside (kernel larger than every `hw`).
    pub fn is_feasible(&self) -> bool {
        self.hw_range().is_none_or(|(lo, hi)| lo <= hi)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> OpConfig {
        let mut pick = |var: SampleVar| -> u32 {
            let range = if var == SampleVar::Hw { self.hw_range() } else { self.bound(var) };
            range.map_or(0, |(lo, hi)| rng.gen_range(lo..=hi))
        };
        let hw = pick(SampleVar::Hw);
        let cin = pick(SampleVar::Cin);
        let cout = pick(SampleVar::Cout);
        let k_s = pick(SampleVar::KS);
        let s = pick(SampleVar::S);
        OpConfig::of_kind(self.kind, hw, cin, cout, k_s, s)
    }
}

/// Inclusive range of bin `b` out of `bins` over `[1, SAMPLE_DIM_MAX]`.
pub fn bin_range(b: usize, bins: usize) -> (u32, u32) {
    let max = SAMPLE_DIM_MAX as usize;
    ((b * max / bins + 1) as u32, ((b + 1) * max / bins) as u32)
}

pub fn bin_of(value: u32, bins: usize) -> usize {
    let v = value.clamp(1, SAMPLE_DIM_MAX) as usize;
    ((v - 1) * bins / SAMPLE_DIM_MAX as usize).min(bins - 1)
}

/// Grid of `bins` equal-width bins per continuous variable crossed with every
/// discrete value; infeasible cells are dropped. Ordering is deterministic.
pub fn grid_regions(kind: OperatorKind, bins: usize) -> Vec<Region> {
    let mut regions = vec![Vec::new()];
    for &var in sample_vars(kind) {
        let choices: Vec<(u32, u32)> = if var.is_discrete() {
            var.values().iter().map(|&v| (v, v)).collect()
        } else {
            (0..bins).map(|b| bin_range(b, bins)).collect()
        };
        regions = regions
            .into_iter()
            .flat_map(|prefix: Vec<(SampleVar, u32, u32)>| {
                choices.iter().map(move |&(lo, hi)| {
                    let mut r = prefix.clone();
                    r.push((var, lo, hi));
                    r
                })
            })
            .collect();
    }
    regions
        .into_iter()
        .map(|bounds| Region { kind, bounds })
        .filter(Region::is_feasible)
        .collect()
}

/// Key identifying the grid cell of `cfg`.
pub fn cell_key(cfg: &OpConfig, bins: usize) -> Vec<u32> {
    sample_vars(cfg.kind)
        .iter()
        .map(|&v| if v.is_discrete() { v.get(cfg) } else { bin_of(v.get(cfg), bins) as u32 })
        .collect()
}

/// Stratified random configurations: strata are visited round-robin in a
/// seeded order and each draw is uniform within its stratum.
pub fn sample_space(kind: OperatorKind, budget: usize, seed: u64) -> Vec<OpConfig> {
    let mut strata = grid_regions(kind, SAMPLE_BINS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kind as u64 + 1) << 56));
    strata.shuffle(&mut rng);
    (0..budget).map(|i| strata[i % strata.len()].draw(&mut rng)).collect()
}
