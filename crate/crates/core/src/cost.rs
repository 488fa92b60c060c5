//! Synthetic per-device latency oracle.
//!
//! Stands in for real hardware: latency grows with multiply-accumulate work
//! counted at 32-channel granularity, each operator pays a fixed dispatch
//! cost, running below a footprint-proportional memory threshold inflates
//! latency linearly in the deficit, and a seeded multiplicative jitter models
//! measurement noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::OpConfig;

/// Bytes per MB; memory quantities are decimal megabytes.
pub const MB: f64 = 1e6;

/// Channel counts are padded up to a multiple of this before costing.
pub const CHANNEL_GRANULARITY: u32 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: String,
    /// Multiply-accumulates per millisecond.
    pub speed: f64,
    /// Per-operator dispatch cost in ms.
    #[serde(default)]
    pub fixed_overhead: f64,
    #[serde(default = "default_mem_threshold_factor")]
    pub mem_threshold_factor: f64,
    #[serde(default = "default_penalty_slope")]
    pub penalty_slope: f64,
    #[serde(default = "default_noise_eta")]
    pub noise_eta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mem_threshold_factor() -> f64 {
    2.0
}

fn default_penalty_slope() -> f64 {
    4.0
}

fn default_noise_eta() -> f64 {
    0.05
}

impl DeviceProfile {
    pub fn new(id: impl Into<String>, speed: f64) -> Self {
        DeviceProfile {
            id: id.into(),
            speed,
            fixed_overhead: 0.0,
            mem_threshold_factor: default_mem_threshold_factor(),
            penalty_slope: default_penalty_slope(),
            noise_eta: default_noise_eta(),
            seed: 0,
        }
    }

    pub fn with_overhead(mut self, ms: f64) -> Self {
        self.fixed_overhead = ms;
        self
    }

    pub fn with_noise(mut self, eta: f64) -> Self {
        self.noise_eta = eta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_memory(mut self, threshold_factor: f64, penalty_slope: f64) -> Self {
        self.mem_threshold_factor = threshold_factor;
        self.penalty_slope = penalty_slope;
        self
    }

    pub fn noiseless(&self) -> Self {
        DeviceProfile { noise_eta: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.speed.is_finite()
            && self.speed > 0.0
            && self.fixed_overhead.is_finite()
            && self.fixed_overhead >= 0.0
            && self.mem_threshold_factor.is_finite()
            && self.mem_threshold_factor > 0.0
            && self.penalty_slope.is_finite()
            && self.penalty_slope >= 0.0
            && (0.0..1.0).contains(&self.noise_eta);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("device profile '{}' out of range: {self:?}", self.id)))
        }
    }
}

fn round_up(c: u32) -> u32 {
    c.div_ceil(CHANNEL_GRANULARITY) * CHANNEL_GRANULARITY
}

/// Multiply-accumulates after padding `cin` and `cout` to the channel granularity.
pub fn padded_macs(cfg: &OpConfig) -> f64 {
    let padded = OpConfig { cin: round_up(cfg.cin), cout: round_up(cfg.cout), ..*cfg };
    padded.flops() as f64 / 2.0
}

/// Bytes an operator touches while running: parameters, input and output.
pub fn working_footprint_bytes(cfg: &OpConfig) -> u64 {
    cfg.param_bytes() + cfg.input_bytes() + cfg.out_bytes()
}

/// Available memory (MB) below which the operator slows down.
pub fn memory_threshold_mb(cfg: &OpConfig, dev: &DeviceProfile) -> f64 {
    dev.mem_threshold_factor * working_footprint_bytes(cfg) as f64 / MB
}

/// Latency without noise: dispatch + work, inflated below the memory threshold.
pub fn noiseless_latency(cfg: &OpConfig, dev: &DeviceProfile, avail_mem_mb: f64) -> f64 {
    let base = dev.fixed_overhead + padded_macs(cfg) / dev.speed;
    let m0 = memory_threshold_mb(cfg, dev);
    if avail_mem_mb < m0 {
        base * (1.0 + dev.penalty_slope * (m0 - avail_mem_mb) / m0)
    } else {
        base
    }
}

fn mix(mut h: u64, v: u64) -> u64 {
    // splitmix64 finalizer over the running state
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Multiplicative noise factor in `[1 - eta, 1 + eta]`, a pure function of its inputs.
pub fn noise_factor(cfg: &OpConfig, dev: &DeviceProfile, avail_mem_mb: f64, salt: u64) -> f64 {
    if dev.noise_eta == 0.0 {
        return 1.0;
    }
    let mut h = mix(dev.seed, cfg.kind as u64);
    for v in [cfg.hw, cfg.cin, cfg.cout, cfg.k_s, cfg.s] {
        h = mix(h, v as u64);
    }
    h = mix(h, avail_mem_mb.to_bits());
    h = mix(h, salt);
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.gen_range(1.0 - dev.noise_eta..=1.0 + dev.noise_eta)
}

/// Ground-truth latency in ms of one operator on `dev` with `avail_mem_mb` free.
pub fn true_latency(cfg: &OpConfig, dev: &DeviceProfile, avail_mem_mb: f64) -> f64 {
    true_latency_salted(cfg, dev, avail_mem_mb, 0)
}

/// As [`true_latency`], with `salt` selecting an independent noise draw
/// (for example one per simulated request).
pub fn true_latency_salted(cfg: &OpConfig, dev: &DeviceProfile, avail_mem_mb: f64, salt: u64) -> f64 {
    noiseless_latency(cfg, dev, avail_mem_mb) * noise_factor(cfg, dev, avail_mem_mb, salt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> DeviceProfile {
        DeviceProfile::new("d", 1e6).with_noise(0.0)
    }

    #[test]
    fn hand_evaluated_conv() {
        let c = OpConfig::conv(34, 3, 16, 3, 1);
        let t = true_latency(&c, &dev(), 1e9);
        assert!((t - 9.437184).abs() < 1e-9, "{t}");
    }

    #[test]
    fn zero_work_costs_overhead() {
        let d = dev().with_overhead(0.1);
        assert_eq!(true_latency(&OpConfig::identity(8, 4), &d, 1e9), 0.1);
    }

    #[test]
    fn no_penalty_at_threshold() {
        let c = OpConfig::conv(64, 32, 64, 3, 1);
        let d = dev();
        let m0 = memory_threshold_mb(&c, &d);
        assert_eq!(true_latency(&c, &d, m0), true_latency(&c, &d, 1e9));
        assert!(true_latency(&c, &d, 0.5 * m0) > true_latency(&c, &d, m0));
    }

    #[test]
    fn noise_is_bounded_and_deterministic() {
        let d = DeviceProfile::new("d", 1e6).with_noise(0.05).with_seed(7);
        let c = OpConfig::conv(64, 32, 64, 3, 1);
        let base = noiseless_latency(&c, &d, 1e9);
        for salt in 0..200 {
            let t = true_latency_salted(&c, &d, 1e9, salt);
            assert!(t >= base * 0.95 && t <= base * 1.05);
            assert_eq!(t.to_bits(), true_latency_salted(&c, &d, 1e9, salt).to_bits());
        }
    }

    #[test]
    fn profile_validation() {
        assert!(dev().validate().is_ok());
        assert!(DeviceProfile::new("x", 0.0).validate().is_err());
        assert!(dev().with_noise(1.0).validate().is_err());
        assert!(dev().with_memory(2.0, -1.0).validate().is_err());
    }
}
