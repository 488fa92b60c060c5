//! Virtual-time event loop. Context events, transfer acknowledgements and
//! request arrivals are merged in time order (acknowledgements first, then
//! events, then requests at equal times). Offload transfers share one uplink
//! and run back to back; requests run at arrival, each on its own, under the
//! placement realized at that instant.

use std::collections::{HashSet, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::context::{ContextSnapshot, LOCAL};
use crate::cost::{true_latency_salted, DeviceProfile, MB};
use crate::error::{Error, Result};
use crate::graph::{valid_cut_points, DnnGraph, OperatorNode};
use crate::manifest::offload_bytes;
use crate::planner::plan_offload;
use crate::predictor::LatencyEstimator;
use crate::prepartition::{bandwidth_for_atom_count, prepartition, PartitionScheme};
use crate::search::{adaptive_search, annotate, distance, scheme_benefit, CostTable};
use crate::trace::{constant_transmission_ms, transmission_latency, StepTrace};

use super::cache::AtomCache;
use super::metrics::{self, MetricsLog};
use super::scenario::{ResolvedEvent, Scenario, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub index: usize,
    pub t_s: f64,
    pub response_ms: f64,
    /// Device of every operator, indexed by operator id.
    pub op_device: Vec<usize>,
    /// Device of every atom, for atom-based strategies.
    pub atom_device: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AckRecord {
    pub t_s: f64,
    pub device: usize,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Initial,
    /// A context event that left the current scheme infeasible or placed on
    /// an inactive device.
    Violation,
    /// A context event under which the current scheme still holds; the new
    /// scheme is adopted only if it beats the current one by the hysteresis.
    Improvement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t_s: f64,
    pub trigger: Trigger,
    pub adopted: bool,
    pub feasible: bool,
    pub benefit: f64,
    pub expansions: usize,
    pub target: Vec<usize>,
    pub plan_moves: usize,
    pub plan_overhead_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub strategy: Strategy,
    pub log: MetricsLog,
    pub requests: Vec<RequestRecord>,
    pub acks: Vec<AckRecord>,
    pub decisions: Vec<DecisionRecord>,
    /// Atoms used by the adamec strategy.
    pub scheme: Option<PartitionScheme>,
    /// Wall-clock milliseconds per search + plan. Kept apart from the
    /// deterministic record and left out of serialization.
    #[serde(skip)]
    pub decision_wall_ms: Vec<f64>,
}

impl SimOutput {
    /// Everything except the wall-clock timings, as JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sim output serializes")
    }
}

/// What an offload transfer carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Atom(usize),
    Layer(usize),
    Model,
}

#[derive(Debug, Clone, Copy)]
struct Transfer {
    payload: Payload,
    device: usize,
    bytes: u64,
}

/// Serialized structure plus parameters of a group of operators.
pub fn ops_offload_bytes(ops: &[OperatorNode]) -> u64 {
    serde_json::to_vec(ops).expect("operators serialize").len() as u64 + ops.iter().map(|o| o.param_bytes).sum::<u64>()
}

/// Runs the graph's operators in topological order with each operator on
/// `op_device[id]`. A tensor is sent to a device once, when its first
/// consumer there runs; the model input starts and the result ends on the
/// mobile device. `exec` and `send` return milliseconds, `send` receiving the
/// elapsed time so far.
pub fn execute_placement(
    graph: &DnnGraph,
    preds: &[Vec<usize>],
    op_device: &[usize],
    exec: &mut dyn FnMut(&OperatorNode, usize) -> Result<f64>,
    send: &mut dyn FnMut(u64, f64) -> Result<f64>,
) -> Result<f64> {
    let mut elapsed = 0.0;
    let mut sent: HashSet<(usize, usize)> = HashSet::new();
    for &id in graph.topo_order() {
        let d = op_device[id];
        if preds[id].is_empty() && d != LOCAL {
            elapsed += send(graph.input_bytes(), elapsed)?;
        }
        for &p in &preds[id] {
            if op_device[p] != d && sent.insert((p, d)) {
                elapsed += send(graph.node(p).out_bytes, elapsed)?;
            }
        }
        elapsed += exec(graph.node(id), d)?;
    }
    if op_device[graph.sink().id] != LOCAL {
        elapsed += send(graph.output_bytes(), elapsed)?;
    }
    Ok(elapsed)
}

/// Per atom, the cheaper of the mobile device and `remote[i]` (when
/// available) over the atom chain, by predicted execution plus boundary
/// transfers. Ties go to the mobile device.
pub fn best_realized_placement(table: &CostTable, remote: &[Option<usize>], bandwidth_mbps: f64) -> Vec<usize> {
    let m = table.atom_count();
    let hop = |i: usize| constant_transmission_ms(table.boundary_bytes[i], bandwidth_mbps);
    // cost[i][s]: best latency up to and including atom i with it at state s
    // (0 = mobile, 1 = remote); back[i][s]: state of atom i - 1.
    let mut cost = vec![[f64::INFINITY; 2]; m];
    let mut back = vec![[0usize; 2]; m];
    let loc = |i: usize, s: usize| if s == 0 { Some(LOCAL) } else { remote[i] };
    for i in 0..m {
        for s in 0..2 {
            let Some(d) = loc(i, s) else { continue };
            let run = table.latency[i][d];
            if i == 0 {
                cost[0][s] = run + if d != LOCAL { hop(0) } else { 0.0 };
                continue;
            }
            for p in 0..2 {
                let Some(pd) = loc(i - 1, p) else { continue };
                let c = cost[i - 1][p] + if pd != d { hop(i) } else { 0.0 } + run;
                if c < cost[i][s] {
                    cost[i][s] = c;
                    back[i][s] = p;
                }
            }
        }
    }
    let finish = |s: usize| cost[m - 1][s] + if loc(m - 1, s).is_some_and(|d| d != LOCAL) { hop(m) } else { 0.0 };
    let mut s = if finish(1) < finish(0) { 1 } else { 0 };
    let mut out = vec![LOCAL; m];
    for i in (0..m).rev() {
        out[i] = loc(i, s).expect("reachable state");
        s = back[i][s];
    }
    out
}

fn capacity_bytes(budget_mb: f64, working_bytes: u64) -> u64 {
    if budget_mb.is_infinite() {
        u64::MAX
    } else {
        ((budget_mb * MB).floor() as u64).saturating_sub(working_bytes)
    }
}

struct Engine<'a> {
    scenario: &'a Scenario,
    estimator: &'a dyn LatencyEstimator,
    graph: &'a DnnGraph,
    preds: Vec<Vec<usize>>,
    trace: StepTrace,
    devices: &'a [DeviceProfile],
    ctx: ContextSnapshot,
    log: MetricsLog,
    requests: Vec<RequestRecord>,
    acks: Vec<AckRecord>,
    decisions: Vec<DecisionRecord>,
    wall_ms: Vec<f64>,
    queue: VecDeque<Transfer>,
    in_flight: Option<(Transfer, f64)>,
    model_bytes: u64,

    // Atom strategy.
    scheme: Option<&'a PartitionScheme>,
    atom_bytes: Vec<u64>,
    table: Option<CostTable>,
    target: Vec<usize>,
    caches: Vec<AtomCache>,

    // Whole-model baselines.
    edge: Option<usize>,
    model_landed: bool,
    layers: Vec<usize>,
    layers_landed: usize,
    /// Operator-level choice of once_offload, fixed per context.
    once_choice: Option<Vec<usize>>,
}

impl<'a> Engine<'a> {
    fn device_id(&self, d: usize) -> &str {
        &self.devices[d].id
    }

    fn strategy(&self) -> Strategy {
        self.scenario.strategy
    }

    fn resident_bytes(&self, d: usize) -> u64 {
        if d == LOCAL {
            return self.model_bytes;
        }
        if !self.ctx.is_active(d) {
            return 0;
        }
        match self.strategy() {
            Strategy::Adamec => self.caches[d].used_bytes(),
            Strategy::OnDevice => 0,
            Strategy::OnceOffload | Strategy::LayerIncremental => self.model_bytes,
        }
    }

    fn sample_memory(&mut self, t: f64) {
        for d in 0..self.devices.len() {
            let mb = self.resident_bytes(d) as f64 / MB;
            let id = self.devices[d].id.clone();
            self.log.push(t, metrics::RESIDENT, &id, mb);
        }
    }

    // ---- transfers ----

    fn start_next(&mut self, now: f64) -> Result<()> {
        while self.in_flight.is_none() {
            let Some(tr) = self.queue.pop_front() else { break };
            let ms = transmission_latency(tr.bytes, &self.trace, now)?;
            let id = self.device_id(tr.device).to_string();
            self.log.push(now, metrics::OFFLOAD_BYTES, &id, tr.bytes as f64);
            self.in_flight = Some((tr, now + ms / 1e3));
        }
        Ok(())
    }

    fn on_ack(&mut self, now: f64) -> Result<()> {
        let (tr, _) = self.in_flight.take().expect("ack without transfer");
        if self.ctx.is_active(tr.device) {
            self.acks.push(AckRecord { t_s: now, device: tr.device, payload: tr.payload });
            let id = self.device_id(tr.device).to_string();
            match tr.payload {
                Payload::Atom(a) => {
                    self.log.push(now, metrics::ACK, &id, a as f64);
                    self.admit(now, a, tr.device)?;
                }
                Payload::Layer(l) => {
                    self.log.push(now, metrics::ACK, &id, l as f64);
                    self.layers_landed = self.layers_landed.max(l + 1);
                }
                Payload::Model => {
                    self.log.push(now, metrics::ACK, &id, -1.0);
                    self.model_landed = true;
                }
            }
            self.sample_memory(now);
        }
        self.start_next(now)
    }

    // ---- atom caches ----

    fn working_bytes(&self, d: usize) -> u64 {
        let table = self.table.as_ref().expect("atom strategy has a table");
        (0..self.target.len()).filter(|&a| self.target[a] == d).map(|a| table.peak_bytes[a]).max().unwrap_or(0)
    }

    fn admit(&mut self, now: f64, atom: usize, d: usize) -> Result<()> {
        let bytes = self.scheme.expect("atom strategy").atoms[atom].param_bytes;
        let target = self.target.clone();
        let pinned = |a: usize| target[a] == d;
        match self.caches[d].admit(atom, bytes, &pinned) {
            Ok(evicted) => self.after_eviction(now, d, evicted),
            Err(Error::CannotFit { .. }) => {
                log::warn!("atom {atom} does not fit on {}; it stays local", self.devices[d].id);
                if self.target[atom] == d {
                    self.target[atom] = LOCAL;
                }
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn after_eviction(&mut self, now: f64, d: usize, evicted: Vec<usize>) -> Result<()> {
        let id = self.device_id(d).to_string();
        for a in evicted {
            self.log.push(now, metrics::EVICTION, &id, a as f64);
            if self.target[a] == d {
                self.target[a] = LOCAL;
            }
        }
        Ok(())
    }

    fn resize_caches(&mut self, now: f64) -> Result<()> {
        for d in 1..self.devices.len() {
            let cap = capacity_bytes(self.ctx.mem_budget_mb[d], self.working_bytes(d));
            let target = self.target.clone();
            let evicted = self.caches[d].resize(cap, &|a| target[a] == d);
            self.after_eviction(now, d, evicted)?;
        }
        Ok(())
    }

    /// Where each atom actually is now: its target edge once resident
    /// there, otherwise the mobile device.
    fn landed(&self) -> Vec<Option<usize>> {
        self.target
            .iter()
            .enumerate()
            .map(|(a, &d)| (d != LOCAL && self.ctx.is_active(d) && self.caches[d].contains(a)).then_some(d))
            .collect()
    }

    // ---- decisions ----

    fn decide(&mut self, now: f64, trigger: Trigger, start: Vec<usize>) -> Result<()> {
        let table = self.table.as_ref().expect("atom strategy has a table");
        let s = self.scenario;
        let clock = Instant::now();
        let outcome = adaptive_search(&start, table, &self.ctx, &s.priorities, &s.weights, &s.search)?;
        let adopt = match trigger {
            Trigger::Initial | Trigger::Violation => true,
            Trigger::Improvement => {
                let current = annotate(&start, table, &self.ctx)?;
                let old = scheme_benefit(&current, table, &self.ctx, &s.weights);
                outcome.feasible
                    && outcome.vertex.assignment != start
                    && (old == f64::NEG_INFINITY && outcome.benefit.is_finite()
                        || outcome.benefit > old + s.hysteresis * old.abs())
            }
        };
        let new_target = if adopt { outcome.vertex.assignment.clone() } else { start.clone() };
        let current: Vec<usize> = self.landed().into_iter().map(|d| d.unwrap_or(LOCAL)).collect();
        let caches = &self.caches;
        let plan = plan_offload(&current, &new_target, &self.atom_bytes, &|a, d| caches[d].contains(a), &self.ctx)?;
        self.wall_ms.push(clock.elapsed().as_secs_f64() * 1e3);

        self.log.push(now, metrics::SEARCH_EXPANSIONS, "", outcome.expansions as f64);
        self.log.push(now, metrics::PLAN_MOVES, "", plan.moves.len() as f64);
        self.log.push(now, metrics::PLAN_OVERHEAD, "", plan.total_overhead_ms);
        self.decisions.push(DecisionRecord {
            t_s: now,
            trigger,
            adopted: adopt,
            feasible: outcome.feasible,
            benefit: outcome.benefit,
            expansions: outcome.expansions,
            target: new_target.clone(),
            plan_moves: plan.moves.len(),
            plan_overhead_ms: plan.total_overhead_ms,
        });

        self.target = new_target;
        self.queue.clear();
        let in_flight = self.in_flight.map(|(tr, _)| (tr.payload, tr.device));
        for m in &plan.moves {
            if m.to == LOCAL || in_flight == Some((Payload::Atom(m.atom), m.to)) {
                continue;
            }
            if self.caches[m.to].contains(m.atom) {
                // Already resident: the acknowledgement is immediate.
                continue;
            }
            self.queue.push_back(Transfer { payload: Payload::Atom(m.atom), device: m.to, bytes: self.atom_bytes[m.atom] });
        }
        self.resize_caches(now)?;
        self.start_next(now)
    }

    fn rebuild_table(&mut self) -> Result<()> {
        if let Some(scheme) = self.scheme {
            self.table = Some(CostTable::from_atoms(&scheme.atoms, self.devices, &self.ctx, self.estimator)?);
        }
        Ok(())
    }

    /// Active edge with the lowest predicted all-remote latency.
    fn best_edge(&self) -> Result<Option<usize>> {
        let mut best: Option<(f64, usize)> = None;
        for e in self.ctx.active_edges() {
            let t = self.predict_ops(&vec![e; self.graph.len()])?;
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, e));
            }
        }
        Ok(best.map(|b| b.1))
    }

    fn predict_ops(&self, op_device: &[usize]) -> Result<f64> {
        let est = self.estimator;
        let (devices, ctx) = (self.devices, &self.ctx);
        execute_placement(
            self.graph,
            &self.preds,
            op_device,
            &mut |op, d| est.operator_latency(&op.config, &devices[d], ctx.mem_budget_mb[d]),
            &mut |bytes, _| Ok(constant_transmission_ms(bytes, ctx.bandwidth_mbps)),
        )
    }

    /// Best predicted operator placement among all-local, all-on-`edge` and
    /// every single cut with the prefix local and the suffix on `edge`.
    fn best_single_cut(&self, edge: usize) -> Result<Vec<usize>> {
        let n = self.graph.len();
        let order = self.graph.topo_order();
        let mut candidates = vec![vec![LOCAL; n], vec![edge; n]];
        for cut in valid_cut_points(self.graph) {
            let mut p = vec![LOCAL; n];
            for &id in &order[cut.index + 1..] {
                p[id] = edge;
            }
            candidates.push(p);
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for c in candidates {
            let t = self.predict_ops(&c)?;
            if best.as_ref().is_none_or(|(bt, _)| t < *bt) {
                best = Some((t, c));
            }
        }
        Ok(best.expect("at least one candidate").1)
    }

    fn start(&mut self) -> Result<()> {
        self.rebuild_table()?;
        match self.strategy() {
            Strategy::Adamec => {
                let m = self.target.len();
                self.decide(0.0, Trigger::Initial, vec![LOCAL; m])?;
            }
            Strategy::OnDevice => {}
            Strategy::OnceOffload => {
                self.edge = self.best_edge()?;
                if let Some(e) = self.edge {
                    let bytes = ops_offload_bytes(self.graph.nodes());
                    self.queue.push_back(Transfer { payload: Payload::Model, device: e, bytes });
                }
            }
            Strategy::LayerIncremental => {
                self.edge = self.best_edge()?;
                if let Some(e) = self.edge {
                    for (l, &count) in self.layers.iter().enumerate() {
                        if count == 0 {
                            continue;
                        }
                        let ops: Vec<OperatorNode> =
                            self.graph.nodes().iter().filter(|o| o.layer == l).cloned().collect();
                        self.queue.push_back(Transfer { payload: Payload::Layer(l), device: e, bytes: ops_offload_bytes(&ops) });
                    }
                }
            }
        }
        self.sample_memory(0.0);
        self.start_next(0.0)
    }

    fn on_event(&mut self, e: &ResolvedEvent) -> Result<()> {
        let now = e.t_s;
        self.mark(e);
        let next = e.apply(&self.ctx);
        if next.same_conditions(&self.ctx) {
            self.ctx.t_s = now;
            return Ok(());
        }
        let before = self.ctx.clone();
        self.ctx = next;
        for &d in &e.leave {
            if before.is_active(d) {
                self.caches[d].clear();
            }
        }
        self.once_choice = None;
        self.rebuild_table()?;
        match self.strategy() {
            Strategy::Adamec => {
                let table = self.table.as_ref().expect("atom strategy has a table");
                let on_inactive = self.target.iter().any(|&d| !self.ctx.is_active(d));
                let start: Vec<usize> =
                    self.target.iter().map(|&d| if self.ctx.is_active(d) { d } else { LOCAL }).collect();
                let violated = on_inactive || {
                    let v = annotate(&start, table, &self.ctx)?;
                    distance(&v, &self.ctx, &self.scenario.priorities) > self.scenario.search.mu_d
                };
                self.target = start.clone();
                let trigger = if violated { Trigger::Violation } else { Trigger::Improvement };
                self.decide(now, trigger, start)?;
            }
            Strategy::OnDevice => {}
            Strategy::OnceOffload | Strategy::LayerIncremental => {
                if self.edge.is_some_and(|d| !self.ctx.is_active(d)) {
                    self.edge = None;
                    self.queue.clear();
                }
            }
        }
        self.sample_memory(now);
        Ok(())
    }

    fn mark(&mut self, e: &ResolvedEvent) {
        let t = e.t_s;
        let p = metrics::EVENT_PREFIX;
        if let Some(b) = e.bandwidth_mbps {
            self.log.push(t, &format!("{p}bandwidth_mbps"), "", b);
        }
        if let Some(l) = e.latency_req_ms {
            self.log.push(t, &format!("{p}latency_req_ms"), "", l);
        }
        for &(d, v) in &e.memory_budget_mb {
            let id = self.device_id(d).to_string();
            self.log.push(t, &format!("{p}memory_budget_mb"), &id, v);
        }
        for &(d, v) in &e.compute_budget_mflops {
            let id = self.device_id(d).to_string();
            self.log.push(t, &format!("{p}compute_budget_mflops"), &id, v);
        }
        for &d in &e.join {
            let id = self.device_id(d).to_string();
            self.log.push(t, &format!("{p}join"), &id, 1.0);
        }
        for &d in &e.leave {
            let id = self.device_id(d).to_string();
            self.log.push(t, &format!("{p}leave"), &id, 1.0);
        }
    }

    fn placement_now(&mut self) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
        let n = self.graph.len();
        Ok(match self.strategy() {
            Strategy::Adamec => {
                let table = self.table.as_ref().expect("atom strategy has a table");
                let atoms = best_realized_placement(table, &self.landed(), self.ctx.bandwidth_mbps);
                let mut ops = vec![LOCAL; n];
                for (a, atom) in self.scheme.expect("atom strategy").atoms.iter().enumerate() {
                    for o in &atom.ops {
                        ops[o.id] = atoms[a];
                    }
                }
                (ops, Some(atoms))
            }
            Strategy::OnDevice => (vec![LOCAL; n], None),
            Strategy::OnceOffload => match self.edge {
                Some(e) if self.model_landed => {
                    if self.once_choice.is_none() {
                        self.once_choice = Some(self.best_single_cut(e)?);
                    }
                    (self.once_choice.clone().expect("just set"), None)
                }
                _ => (vec![LOCAL; n], None),
            },
            Strategy::LayerIncremental => match self.edge {
                Some(e) => {
                    let landed = self.layers_landed;
                    (self.graph.nodes().iter().map(|o| if o.layer < landed { e } else { LOCAL }).collect(), None)
                }
                None => (vec![LOCAL; n], None),
            },
        })
    }

    fn on_request(&mut self, index: usize, t: f64) -> Result<()> {
        let (op_device, atom_device) = self.placement_now()?;
        let (devices, ctx, trace) = (self.devices, &self.ctx, &self.trace);
        let salt_base = self.scenario.seed ^ ((index as u64) << 24);
        let response_ms = execute_placement(
            self.graph,
            &self.preds,
            &op_device,
            &mut |op, d| Ok(true_latency_salted(&op.config, &devices[d], ctx.mem_budget_mb[d], salt_base ^ op.id as u64)),
            &mut |bytes, elapsed_ms| transmission_latency(bytes, trace, t + elapsed_ms / 1e3),
        )?;
        self.log.push(t, metrics::RESPONSE, "", response_ms);
        self.sample_memory(t);
        self.requests.push(RequestRecord { index, t_s: t, response_ms, op_device, atom_device });
        Ok(())
    }

    fn run(mut self) -> Result<SimOutput> {
        self.start()?;
        let events = self.scenario.resolved_events()?;
        let times = self.scenario.requests.times();
        let horizon = self.scenario.horizon_s;
        let (mut ei, mut ri) = (0, 0);
        loop {
            let ack = self.in_flight.map(|(_, t)| t).filter(|&t| t <= horizon);
            let ev = events.get(ei).map(|e| e.t_s);
            let rq = times.get(ri).copied();
            let next = [ack, ev, rq].into_iter().flatten().min_by(f64::total_cmp);
            let Some(now) = next else { break };
            if ack == Some(now) {
                self.on_ack(now)?;
            } else if ev == Some(now) {
                self.on_event(&events[ei])?;
                ei += 1;
            } else {
                self.on_request(ri, now)?;
                ri += 1;
            }
        }
        Ok(SimOutput {
            strategy: self.strategy(),
            log: self.log,
            requests: self.requests,
            acks: self.acks,
            decisions: self.decisions,
            scheme: self.scheme.cloned(),
            decision_wall_ms: self.wall_ms,
        })
    }
}

/// Pre-partitions the scenario's model under its reference context, tuning
/// the reference bandwidth first when `reference_atoms` is set.
pub fn scenario_scheme(scenario: &Scenario, graph: &DnnGraph, estimator: &dyn LatencyEstimator) -> Result<PartitionScheme> {
    let mut reference = scenario.reference_context()?;
    if let Some(n) = scenario.reference_atoms {
        reference.bandwidth_mbps =
            bandwidth_for_atom_count(graph, &scenario.devices, &reference, estimator, &scenario.weights, n)?
                .ok_or_else(|| Error::invalid(format!("no reference bandwidth yields {n} atoms")))?;
    }
    prepartition(graph, &scenario.devices, &reference, estimator, &scenario.weights)
}

/// Runs the scenario on its own model, pre-partitioning when the strategy
/// needs atoms.
pub fn run_scenario(scenario: &Scenario, estimator: &dyn LatencyEstimator) -> Result<SimOutput> {
    let graph = scenario.graph()?;
    let scheme = match scenario.strategy {
        Strategy::Adamec => Some(scenario_scheme(scenario, &graph, estimator)?),
        _ => None,
    };
    run_scenario_with(scenario, &graph, scheme.as_ref(), estimator)
}

/// Runs the scenario on `graph`; the adamec strategy uses `scheme`, which
/// must partition that graph.
pub fn run_scenario_with(
    scenario: &Scenario,
    graph: &DnnGraph,
    scheme: Option<&PartitionScheme>,
    estimator: &dyn LatencyEstimator,
) -> Result<SimOutput> {
    scenario.validate()?;
    if scenario.strategy == Strategy::Adamec {
        let s = scheme.ok_or_else(|| Error::invalid("the adamec strategy needs a partition scheme"))?;
        let mut ids = s.op_order();
        ids.sort_unstable();
        if ids != (0..graph.len()).collect::<Vec<_>>() {
            return Err(Error::invalid("partition scheme does not cover the scenario graph"));
        }
    }
    let scheme = if scenario.strategy == Strategy::Adamec { scheme } else { None };
    let m = scheme.map_or(0, |s| s.atoms.len());
    let n = scenario.devices.len();
    let mut layers = vec![0usize; graph.layer_count()];
    for o in graph.nodes() {
        if o.layer >= layers.len() {
            layers.resize(o.layer + 1, 0);
        }
        layers[o.layer] += 1;
    }
    let engine = Engine {
        scenario,
        estimator,
        graph,
        preds: graph.predecessors(),
        trace: scenario.bandwidth_trace()?,
        devices: &scenario.devices,
        ctx: scenario.initial_context()?,
        log: MetricsLog::new(scenario.strategy.name()),
        requests: Vec::new(),
        acks: Vec::new(),
        decisions: Vec::new(),
        wall_ms: Vec::new(),
        queue: VecDeque::new(),
        in_flight: None,
        model_bytes: graph.total_param_bytes(),
        scheme,
        atom_bytes: scheme.map_or_else(Vec::new, |s| s.atoms.iter().map(offload_bytes).collect()),
        table: None,
        target: vec![LOCAL; m],
        caches: (0..n).map(|_| AtomCache::new(u64::MAX)).collect(),
        edge: None,
        model_landed: false,
        layers,
        layers_landed: 0,
        once_choice: None,
    };
    engine.run()
}
