//! Scenario files: devices, the nominal context, timed context changes, the
//! request schedule and the strategy under test. See `docs/scenario-schema.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::builders::build_model;
use crate::context::{ContextSnapshot, LOCAL};
use crate::cost::DeviceProfile;
use crate::error::{Error, Result};
use crate::graph::DnnGraph;
use crate::prepartition::BenefitWeights;
use crate::search::{DistancePriorities, SearchParams};
use crate::trace::StepTrace;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Adamec,
    OnDevice,
    OnceOffload,
    LayerIncremental,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Adamec, Strategy::OnDevice, Strategy::OnceOffload, Strategy::LayerIncremental];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Adamec => "adamec",
            Strategy::OnDevice => "on_device",
            Strategy::OnceOffload => "once_offload",
            Strategy::LayerIncremental => "layer_incremental",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub name: String,
    #[serde(default = "one")]
    pub scale: u32,
}

fn one() -> u32 {
    1
}

/// Maps wall-clock labels such as `"09:36"` to scenario seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBase {
    pub origin: String,
    pub seconds_per_minute: f64,
}

impl Default for TimeBase {
    fn default() -> Self {
        TimeBase { origin: "00:00".into(), seconds_per_minute: 60.0 }
    }
}

fn parse_clock(s: &str) -> Result<f64> {
    let bad = || Error::invalid(format!("bad clock time '{s}', expected HH:MM"));
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    let m: u32 = m.trim().parse().map_err(|_| bad())?;
    if m >= 60 {
        return Err(bad());
    }
    Ok((h * 60 + m) as f64)
}

impl TimeBase {
    pub fn seconds(&self, clock: &str) -> Result<f64> {
        Ok((parse_clock(clock)? - parse_clock(&self.origin)?) * self.seconds_per_minute)
    }
}

/// Multipliers applied to every memory and compute budget in the file, so a
/// scenario can keep budgets quoted for other hardware and models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetScale {
    pub memory: f64,
    pub compute: f64,
}

impl Default for BudgetScale {
    fn default() -> Self {
        BudgetScale { memory: 1.0, compute: 1.0 }
    }
}

/// Context settings keyed by device id. Budgets left out, or `null`, are
/// unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalContext {
    pub bandwidth_mbps: f64,
    #[serde(default, with = "optional_limit")]
    pub latency_req_ms: Option<f64>,
    #[serde(default)]
    pub memory_budget_mb: BTreeMap<String, Option<f64>>,
    #[serde(default)]
    pub compute_budget_mflops: BTreeMap<String, Option<f64>>,
    /// Edge devices participating at the start.
    pub active: Vec<String>,
}

mod optional_limit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => s.serialize_some(x),
            _ => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d)
    }
}

/// One context change; every field present is applied at the same instant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEvent {
    /// Scenario seconds; exclusive with `at`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s: Option<f64>,
    /// Clock label resolved through the time base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_req_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub memory_budget_mb: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub compute_budget_mflops: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub join: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub leave: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestSchedule {
    Periodic { start_s: f64, interval_s: f64, count: usize },
    Explicit { times: Vec<f64> },
}

impl RequestSchedule {
    pub fn times(&self) -> Vec<f64> {
        match self {
            RequestSchedule::Periodic { start_s, interval_s, count } => {
                (0..*count).map(|i| start_s + i as f64 * interval_s).collect()
            }
            RequestSchedule::Explicit { times } => times.clone(),
        }
    }
}

fn default_hysteresis() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub model: ModelRef,
    /// Roster; the first entry is the mobile device.
    pub devices: Vec<DeviceProfile>,
    pub nominal: NominalContext,
    /// Pre-partition reference; the nominal context when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<NominalContext>,
    /// Tune the reference bandwidth so pre-partition yields this many atoms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_atoms: Option<usize>,
    #[serde(default)]
    pub time_base: TimeBase,
    #[serde(default)]
    pub budget_scale: BudgetScale,
    #[serde(default)]
    pub events: Vec<ContextEvent>,
    pub requests: RequestSchedule,
    pub horizon_s: f64,
    pub strategy: Strategy,
    #[serde(default)]
    pub weights: BenefitWeights,
    #[serde(default)]
    pub priorities: DistancePriorities,
    #[serde(default)]
    pub search: SearchParams,
    /// Relative benefit gain a non-violating event needs to trigger a replan.
    #[serde(default = "default_hysteresis")]
    pub hysteresis: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A context change with device ids resolved to roster positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedEvent {
    pub t_s: f64,
    pub label: String,
    pub bandwidth_mbps: Option<f64>,
    pub latency_req_ms: Option<f64>,
    pub memory_budget_mb: Vec<(usize, f64)>,
    pub compute_budget_mflops: Vec<(usize, f64)>,
    pub join: Vec<usize>,
    pub leave: Vec<usize>,
}

impl ResolvedEvent {
    pub fn apply(&self, ctx: &ContextSnapshot) -> ContextSnapshot {
        let mut next = ctx.clone();
        next.t_s = self.t_s;
        if let Some(b) = self.bandwidth_mbps {
            next.bandwidth_mbps = b;
        }
        if let Some(t) = self.latency_req_ms {
            next.latency_req_ms = t;
        }
        for &(d, v) in &self.memory_budget_mb {
            next.mem_budget_mb[d] = v;
        }
        for &(d, v) in &self.compute_budget_mflops {
            next.compute_budget_mflops[d] = v;
        }
        for d in &self.join {
            next.active.insert(*d);
        }
        for d in &self.leave {
            next.active.remove(d);
        }
        next
    }
}

fn limit(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::invalid(format!("malformed scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn device_index(&self, id: &str) -> Result<usize> {
        self.devices
            .iter()
            .position(|d| d.id == id)
            .ok_or_else(|| Error::invalid(format!("scenario names unknown device '{id}'")))
    }

    pub fn graph(&self) -> Result<DnnGraph> {
        build_model(&self.model.name, self.model.scale).map_err(|e| match e {
            Error::NotFound(m) => Error::invalid(m),
            other => other,
        })
    }

    fn edge_index(&self, id: &str) -> Result<usize> {
        match self.device_index(id)? {
            LOCAL => Err(Error::invalid("the mobile device cannot join, leave or be listed as an edge")),
            d => Ok(d),
        }
    }

    fn budgets(&self, map: &BTreeMap<String, Option<f64>>, scale: f64) -> Result<Vec<f64>> {
        let mut out = vec![f64::INFINITY; self.devices.len()];
        for (id, v) in map {
            out[self.device_index(id)?] = limit(*v) * scale;
        }
        Ok(out)
    }

    pub fn context_of(&self, c: &NominalContext) -> Result<ContextSnapshot> {
        let mut active = BTreeSet::from([LOCAL]);
        for id in &c.active {
            active.insert(self.edge_index(id)?);
        }
        let ctx = ContextSnapshot {
            t_s: 0.0,
            bandwidth_mbps: c.bandwidth_mbps,
            latency_req_ms: limit(c.latency_req_ms),
            mem_budget_mb: self.budgets(&c.memory_budget_mb, self.budget_scale.memory)?,
            compute_budget_mflops: self.budgets(&c.compute_budget_mflops, self.budget_scale.compute)?,
            active,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn initial_context(&self) -> Result<ContextSnapshot> {
        self.context_of(&self.nominal)
    }

    pub fn reference_context(&self) -> Result<ContextSnapshot> {
        self.context_of(self.reference.as_ref().unwrap_or(&self.nominal))
    }

    pub fn event_time(&self, e: &ContextEvent) -> Result<f64> {
        match (&e.t_s, &e.at) {
            (Some(t), None) => Ok(*t),
            (None, Some(clock)) => self.time_base.seconds(clock),
            _ => Err(Error::invalid("each event needs exactly one of t_s and at")),
        }
    }

    /// Events with resolved device indices, in time order.
    pub fn resolved_events(&self) -> Result<Vec<ResolvedEvent>> {
        let mut out = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let pairs = |map: &BTreeMap<String, Option<f64>>, scale: f64| -> Result<Vec<(usize, f64)>> {
                map.iter().map(|(id, v)| Ok((self.device_index(id)?, limit(*v) * scale))).collect()
            };
            let ids = |list: &[String]| -> Result<Vec<usize>> { list.iter().map(|id| self.edge_index(id)).collect() };
            out.push(ResolvedEvent {
                t_s: self.event_time(e)?,
                label: e.at.clone().unwrap_or_else(|| format!("t={}", self.event_time(e).unwrap_or(0.0))),
                bandwidth_mbps: e.bandwidth_mbps,
                latency_req_ms: e.latency_req_ms,
                memory_budget_mb: pairs(&e.memory_budget_mb, self.budget_scale.memory)?,
                compute_budget_mflops: pairs(&e.compute_budget_mflops, self.budget_scale.compute)?,
                join: ids(&e.join)?,
                leave: ids(&e.leave)?,
            });
        }
        Ok(out)
    }

    /// Bandwidth over time as seen by transfers.
    pub fn bandwidth_trace(&self) -> Result<StepTrace> {
        let mut steps = vec![(0.0, self.nominal.bandwidth_mbps)];
        for e in self.resolved_events()? {
            if let Some(b) = e.bandwidth_mbps {
                match steps.last_mut() {
                    Some(last) if last.0 == e.t_s => last.1 = b,
                    _ => steps.push((e.t_s, b)),
                }
            }
        }
        StepTrace::new(steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::invalid(format!("unsupported scenario schema version {}", self.schema_version)));
        }
        if self.devices.is_empty() {
            return Err(Error::invalid("scenario needs at least the mobile device"));
        }
        let mut ids = BTreeSet::new();
        for d in &self.devices {
            d.validate()?;
            if !ids.insert(d.id.as_str()) {
                return Err(Error::invalid(format!("duplicate device id '{}'", d.id)));
            }
        }
        if !(self.horizon_s > 0.0) || !self.horizon_s.is_finite() {
            return Err(Error::invalid("horizon must be positive"));
        }
        let BudgetScale { memory, compute } = self.budget_scale;
        if !(memory > 0.0 && memory.is_finite() && compute > 0.0 && compute.is_finite()) {
            return Err(Error::invalid("budget scales must be positive and finite"));
        }
        if !(self.hysteresis >= 0.0) {
            return Err(Error::invalid("hysteresis must be non-negative"));
        }
        if let Some(0) = self.reference_atoms {
            return Err(Error::invalid("reference_atoms must be positive"));
        }
        self.weights.validate()?;
        self.priorities.validate()?;
        self.search.validate()?;
        self.initial_context()?;
        self.reference_context()?;
        let events = self.resolved_events()?;
        let mut prev = 0.0;
        for e in &events {
            if !(e.t_s >= prev) || e.t_s > self.horizon_s {
                return Err(Error::invalid("events must be time-sorted within [0, horizon]"));
            }
            if e.bandwidth_mbps.is_some_and(|b| !(b >= 0.0)) || e.latency_req_ms.is_some_and(|t| !(t >= 0.0)) {
                return Err(Error::invalid("event values must be non-negative"));
            }
            prev = e.t_s;
        }
        if let RequestSchedule::Periodic { interval_s, .. } = self.requests {
            if !(interval_s > 0.0) {
                return Err(Error::invalid("request interval must be positive"));
            }
        }
        let times = self.requests.times();
        if times.iter().any(|t| !(*t >= 0.0 && *t <= self.horizon_s)) {
            return Err(Error::invalid("request times must lie within [0, horizon]"));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("request times must be sorted"));
        }
        self.graph()?;
        Ok(())
    }
}
