//! Deployment context: what the network and the devices offer at one instant.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Roster index of the mobile device that issues requests.
pub const LOCAL: usize = 0;

/// Budgets are indexed by roster position; position [`LOCAL`] is the mobile
/// device and is always active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub t_s: f64,
    pub bandwidth_mbps: f64,
    #[serde(with = "unbounded")]
    pub latency_req_ms: f64,
    #[serde(with = "unbounded_vec")]
    pub mem_budget_mb: Vec<f64>,
    #[serde(with = "unbounded_vec")]
    pub compute_budget_mflops: Vec<f64>,
    pub active: BTreeSet<usize>,
}

impl ContextSnapshot {
    /// Every device active with unlimited budgets.
    pub fn unconstrained(devices: usize, bandwidth_mbps: f64, latency_req_ms: f64) -> Self {
        ContextSnapshot {
            t_s: 0.0,
            bandwidth_mbps,
            latency_req_ms,
            mem_budget_mb: vec![f64::INFINITY; devices],
            compute_budget_mflops: vec![f64::INFINITY; devices],
            active: (0..devices).collect(),
        }
    }

    pub fn device_count(&self) -> usize {
        self.mem_budget_mb.len()
    }

    pub fn is_active(&self, device: usize) -> bool {
        device == LOCAL || self.active.contains(&device)
    }

    /// Active edge devices in roster order.
    pub fn active_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().copied().filter(|&d| d != LOCAL)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mem_budget_mb.len();
        if n == 0 || self.compute_budget_mflops.len() != n {
            return Err(Error::invalid("context budgets must cover the same non-empty roster"));
        }
        if self.active.iter().any(|&d| d >= n) {
            return Err(Error::invalid("active device outside the roster"));
        }
        let nonneg = |v: f64| !v.is_nan() && v >= 0.0;
        if !self.mem_budget_mb.iter().chain(&self.compute_budget_mflops).all(|&v| nonneg(v)) {
            return Err(Error::invalid("budgets must be non-negative"));
        }
        if !nonneg(self.bandwidth_mbps) || !nonneg(self.latency_req_ms) {
            return Err(Error::invalid("bandwidth and latency requirement must be non-negative"));
        }
        Ok(())
    }

    /// Same constraints, ignoring the timestamp.
    pub fn same_conditions(&self, other: &ContextSnapshot) -> bool {
        self.bandwidth_mbps == other.bandwidth_mbps
            && self.latency_req_ms == other.latency_req_ms
            && self.mem_budget_mb == other.mem_budget_mb
            && self.compute_budget_mflops == other.compute_budget_mflops
            && self.active == other.active
    }
}

/// Infinite limits are written as `null`.
pub mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub mod unbounded_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}
