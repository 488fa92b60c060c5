//! Runtime latency prediction: per-kind regression forests plus a memory
//! bias corrector, trained against a device's latency oracle.

pub mod bias;
pub mod forest;
pub mod metrics;
pub mod sampling;
pub mod supplement;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{memory_threshold_mb, noiseless_latency, true_latency_salted, DeviceProfile};
use crate::error::{Error, Result};
use crate::graph::{OpConfig, OperatorKind};

pub use bias::{train_bias, BiasModel, BiasParams};
pub use forest::{train_forest, ForestModel, ForestParams, TargetScale};
pub use metrics::{evaluate_pairs, PredictorMetrics};
pub use sampling::{default_budget, sample_space};
pub use supplement::{adaptive_supplement, SupplementParams, SupplementReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub config: OpConfig,
    pub device_id: String,
    pub avail_mem_mb: f64,
    pub latency_ms: f64,
}

/// How much memory the device has free while a sample is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemPolicy {
    /// At least every configuration's memory threshold.
    Ample,
    /// One sample per configuration and grid value (MB).
    Swept(Vec<f64>),
    Fixed(f64),
}

/// Measures every configuration on the oracle of `device`.
pub fn collect_samples(configs: &[OpConfig], device: &DeviceProfile, policy: &MemPolicy) -> Result<Vec<LatencySample>> {
    device.validate()?;
    let mems: Vec<f64> = match policy {
        MemPolicy::Ample => {
            vec![configs.iter().map(|c| memory_threshold_mb(c, device)).fold(0.0, f64::max)]
        }
        MemPolicy::Swept(grid) => grid.clone(),
        MemPolicy::Fixed(m) => vec![*m],
    };
    if mems.iter().any(|m| m.is_nan() || *m < 0.0) {
        return Err(Error::invalid("available memory must be non-negative"));
    }
    let mut out = Vec::with_capacity(configs.len() * mems.len());
    for (i, cfg) in configs.iter().enumerate() {
        for &mem in &mems {
            out.push(LatencySample {
                config: *cfg,
                device_id: device.id.clone(),
                avail_mem_mb: mem,
                latency_ms: true_latency_salted(cfg, device, mem, i as u64),
            });
        }
    }
    Ok(out)
}

/// Per-operator latency source used by every decision algorithm.
pub trait LatencyEstimator: Sync {
    fn operator_latency(&self, op: &OpConfig, device: &DeviceProfile, avail_mem_mb: f64) -> Result<f64>;
}

/// The noiseless oracle itself, for experiments that isolate decision
/// quality from prediction error.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEstimator;

impl LatencyEstimator for ExactEstimator {
    fn operator_latency(&self, op: &OpConfig, device: &DeviceProfile, avail_mem_mb: f64) -> Result<f64> {
        Ok(noiseless_latency(op, device, avail_mem_mb))
    }
}

/// Sum of per-operator predictions for a group of operators on one device.
pub fn predict_ops_latency<'a>(
    estimator: &dyn LatencyEstimator,
    ops: impl IntoIterator<Item = &'a OpConfig>,
    device: &DeviceProfile,
    avail_mem_mb: f64,
) -> Result<f64> {
    ops.into_iter().map(|op| estimator.operator_latency(op, device, avail_mem_mb)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceModels {
    pub profile: DeviceProfile,
    pub forest: ForestModel,
    pub bias: BiasModel,
}

impl DeviceModels {
    pub fn forest_latency(&self, op: &OpConfig) -> Result<f64> {
        self.forest.predict(op)
    }

    pub fn latency(&self, op: &OpConfig, avail_mem_mb: f64) -> Result<f64> {
        let f = self.forest.predict(op)?;
        Ok(f + self.bias.bias_ms(op, avail_mem_mb, f))
    }
}

pub const MODELS_SCHEMA_VERSION: u32 = 1;

/// Trained models for a roster of devices, keyed by device id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub schema_version: u32,
    pub devices: BTreeMap<String, DeviceModels>,
}

impl Predictor {
    pub fn new(models: impl IntoIterator<Item = DeviceModels>) -> Self {
        Predictor {
            schema_version: MODELS_SCHEMA_VERSION,
            devices: models.into_iter().map(|m| (m.profile.id.clone(), m)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("models serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Predictor = serde_json::from_str(text)?;
        if p.schema_version != MODELS_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported models schema version {}", p.schema_version)));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl LatencyEstimator for Predictor {
    fn operator_latency(&self, op: &OpConfig, device: &DeviceProfile, avail_mem_mb: f64) -> Result<f64> {
        self.devices
            .get(&device.id)
            .ok_or_else(|| Error::NotFound(format!("latency models for device '{}'", device.id)))?
            .latency(op, avail_mem_mb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Multiplies every kind's default sample budget.
    pub budget_scale: f64,
    pub kinds: Vec<OperatorKind>,
    pub forest: ForestParams,
    pub supplement: SupplementParams,
    pub bias: BiasParams,
    pub swept_grid_mb: Vec<f64>,
    /// Configurations per kind measured across the swept grid for the bias model.
    pub bias_configs_per_kind: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            budget_scale: 1.0,
            kinds: OperatorKind::ALL.to_vec(),
            forest: ForestParams::default(),
            supplement: SupplementParams::default(),
            bias: BiasParams::default(),
            swept_grid_mb: vec![64.0, 128.0, 256.0, 512.0],
            bias_configs_per_kind: 256,
            seed: 0,
        }
    }
}

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: OperatorKind,
    pub n_train: usize,
    pub n_test: usize,
    pub train_score: f64,
    pub test: PredictorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub degenerate: bool,
    /// Held-out swept samples measured below their memory threshold.
    pub sub_threshold: usize,
    pub rmse_forest: f64,
    pub rmse_corrected: f64,
}

impl BiasReport {
    /// Fractional RMSE reduction the bias model achieves below threshold.
    pub fn reduction(&self) -> f64 {
        if self.rmse_forest > 0.0 {
            1.0 - self.rmse_corrected / self.rmse_forest
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device: String,
    pub kinds: Vec<KindReport>,
    pub supplement: SupplementReport,
    pub bias: BiasReport,
}

pub fn kind_reports(forest: &ForestModel) -> Result<Vec<KindReport>> {
    forest
        .kinds
        .values()
        .filter(|k| !k.holdout.is_empty())
        .map(|k| {
            Ok(KindReport {
                kind: k.kind,
                n_train: k.n_train,
                n_test: k.holdout.len(),
                train_score: k.train_score,
                test: k.evaluate(&k.holdout)?,
            })
        })
        .collect()
}

/// Compares forest-only and bias-corrected error on `samples` that ran
/// below their memory threshold.
pub fn bias_report(samples: &[LatencySample], device: &DeviceProfile, forest: &ForestModel, bias: &BiasModel) -> Result<BiasReport> {
    let mut plain = Vec::new();
    let mut corrected = Vec::new();
    for s in samples.iter().filter(|s| s.avail_mem_mb < memory_threshold_mb(&s.config, device)) {
        let f = forest.predict(&s.config)?;
        plain.push((s.latency_ms, f));
        corrected.push((s.latency_ms, f + bias.bias_ms(&s.config, s.avail_mem_mb, f)));
    }
    Ok(BiasReport {
        degenerate: bias.degenerate,
        sub_threshold: plain.len(),
        rmse_forest: metrics::rmse(&plain),
        rmse_corrected: metrics::rmse(&corrected),
    })
}

/// Full pipeline for one device: stratified sampling, forest training,
/// supplementary sampling, then the bias model on swept-memory samples.
pub fn train_device(device: &DeviceProfile, cfg: &TrainingConfig) -> Result<(DeviceModels, DeviceReport)> {
    device.validate()?;
    if !(cfg.budget_scale > 0.0) {
        return Err(Error::invalid("budget scale must be positive"));
    }
    let min_budget = 4 * cfg.forest.min_leaf.max(1) + 4;
    let mut samples = Vec::new();
    for &kind in &cfg.kinds {
        let budget = ((default_budget(kind) as f64 * cfg.budget_scale).ceil() as usize).max(min_budget);
        let configs = sample_space(kind, budget, cfg.seed);
        samples.extend(collect_samples(&configs, device, &MemPolicy::Ample)?);
    }
    let forest = train_forest(&samples, &cfg.forest, cfg.seed)?;
    let (forest, supplement) = adaptive_supplement(forest, device, &cfg.supplement, cfg.seed.wrapping_add(1))?;

    let mut swept = Vec::new();
    for &kind in &cfg.kinds {
        let configs = sample_space(kind, cfg.bias_configs_per_kind, cfg.seed.wrapping_add(2));
        swept.extend(collect_samples(&configs, device, &MemPolicy::Swept(cfg.swept_grid_mb.clone()))?);
    }
    let (bias_train, bias_test) = forest::split_holdout(swept, 0.2, 1, cfg.seed.wrapping_add(3));
    let bias = train_bias(&bias_train, &forest, &cfg.bias, cfg.seed.wrapping_add(4))?;
    let bias_rep = bias_report(&bias_test, device, &forest, &bias)?;
    let report = DeviceReport {
        device: device.id.clone(),
        kinds: kind_reports(&forest)?,
        supplement,
        bias: bias_rep,
    };
    Ok((DeviceModels { profile: device.clone(), forest, bias }, report))
}

pub fn train_predictor(devices: &[DeviceProfile], cfg: &TrainingConfig) -> Result<(Predictor, Vec<DeviceReport>)> {
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for (i, dev) in devices.iter().enumerate() {
        let per_device = TrainingConfig { seed: cfg.seed.wrapping_add(1000 * i as u64), ..cfg.clone() };
        let (m, r) = train_device(dev, &per_device)?;
        models.push(m);
        reports.push(r);
    }
    Ok((Predictor::new(models), reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_policies() {
        let dev = DeviceProfile::new("d", 1e6);
        let configs = sample_space(OperatorKind::Conv, 100, 1);
        let ample = collect_samples(&configs, &dev, &MemPolicy::Ample).unwrap();
        assert_eq!(ample.len(), 100);
        assert!(ample.iter().all(|s| s.avail_mem_mb >= memory_threshold_mb(&s.config, &dev)));
        let swept = collect_samples(&configs, &dev, &MemPolicy::Swept(vec![64.0, 128.0, 256.0, 512.0])).unwrap();
        assert_eq!(swept.len(), 400);
        let again = collect_samples(&configs, &dev, &MemPolicy::Swept(vec![64.0, 128.0, 256.0, 512.0])).unwrap();
        assert_eq!(serde_json::to_string(&swept).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn exact_estimator_is_noiseless() {
        let dev = DeviceProfile::new("d", 1e6).with_noise(0.3);
        let c = OpConfig::conv(34, 3, 16, 3, 1);
        assert_eq!(ExactEstimator.operator_latency(&c, &dev, 1e9).unwrap(), noiseless_latency(&c, &dev, 1e9));
    }
}
