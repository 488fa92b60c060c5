//! Lazy combination graph over atom-to-device assignments and the two-phase
//! top-k search that picks a feasible, high-benefit assignment for a context.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::context::{ContextSnapshot, LOCAL};
use crate::cost::{DeviceProfile, MB};
use crate::error::{Error, Result};
use crate::predictor::LatencyEstimator;
use crate::prepartition::{latency_benefit, Atom, BenefitWeights};
use crate::trace::constant_transmission_ms;

/// Per-atom costs that annotations are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    /// `[atom][device]` predicted execution latency in ms.
    pub latency: Vec<Vec<f64>>,
    /// Tensor bytes at each atom boundary: model input, between atoms, result.
    pub boundary_bytes: Vec<u64>,
    pub param_bytes: Vec<u64>,
    pub peak_bytes: Vec<u64>,
    pub mflops: Vec<f64>,
}

impl CostTable {
    /// Predicts every atom on every roster device, each under that device's
    /// memory budget in `ctx`.
    pub fn from_atoms(
        atoms: &[Atom],
        devices: &[DeviceProfile],
        ctx: &ContextSnapshot,
        estimator: &dyn LatencyEstimator,
    ) -> Result<Self> {
        if devices.len() != ctx.device_count() {
            return Err(Error::invalid("device roster and context budgets differ in length"));
        }
        if atoms.is_empty() {
            return Err(Error::invalid("no atoms"));
        }
        let latency = atoms
            .iter()
            .map(|a| {
                devices
                    .iter()
                    .enumerate()
                    .map(|(j, d)| a.predicted_latency(estimator, d, ctx.mem_budget_mb[j]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut boundary_bytes: Vec<u64> = atoms.iter().map(|a| a.boundary_in_bytes).collect();
        boundary_bytes.push(atoms[atoms.len() - 1].boundary_out_bytes);
        Ok(CostTable {
            latency,
            boundary_bytes,
            param_bytes: atoms.iter().map(|a| a.param_bytes).collect(),
            peak_bytes: atoms.iter().map(|a| a.peak_boundary_bytes()).collect(),
            mflops: atoms.iter().map(|a| a.mflops()).collect(),
        })
    }

    pub fn atom_count(&self) -> usize {
        self.latency.len()
    }

    pub fn device_count(&self) -> usize {
        self.latency.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.atom_count();
        let n = self.device_count();
        if m == 0 || n == 0 {
            return Err(Error::invalid("empty cost table"));
        }
        if self.latency.iter().any(|row| row.len() != n)
            || self.boundary_bytes.len() != m + 1
            || self.param_bytes.len() != m
            || self.peak_bytes.len() != m
            || self.mflops.len() != m
        {
            return Err(Error::invalid("cost table dimensions disagree"));
        }
        Ok(())
    }

    /// Latency of running every atom on the mobile device.
    pub fn local_latency(&self) -> f64 {
        self.latency.iter().map(|row| row[LOCAL]).sum()
    }
}

/// One assignment of atoms to roster devices with its predicted demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationVertex {
    pub assignment: Vec<usize>,
    /// Total predicted latency: execution plus transmission.
    pub latency_ms: f64,
    pub exe_ms: f64,
    pub tran_ms: f64,
    /// Per roster device, MB.
    pub mem_mb: Vec<f64>,
    /// Per roster device, MFLOPs.
    pub compute_mflops: Vec<f64>,
}

/// Execution and transmission parts of a scheme's predicted latency. The
/// input is uploaded when the first atom is remote and the result returned
/// when the last atom is remote.
pub fn predict_scheme_latency(assignment: &[usize], table: &CostTable, ctx: &ContextSnapshot) -> Result<(f64, f64)> {
    check_assignment(assignment, table, ctx)?;
    let exe = assignment.iter().enumerate().map(|(i, &d)| table.latency[i][d]).sum();
    let mut tran = 0.0;
    let mut prev = LOCAL;
    for (i, &d) in assignment.iter().chain(std::iter::once(&LOCAL)).enumerate() {
        if d != prev {
            tran += constant_transmission_ms(table.boundary_bytes[i], ctx.bandwidth_mbps);
        }
        prev = d;
    }
    Ok((exe, tran))
}

fn check_assignment(assignment: &[usize], table: &CostTable, ctx: &ContextSnapshot) -> Result<()> {
    if assignment.len() != table.atom_count() {
        return Err(Error::invalid(format!(
            "assignment covers {} atoms, scheme has {}",
            assignment.len(),
            table.atom_count()
        )));
    }
    if table.device_count() != ctx.device_count() {
        return Err(Error::invalid("cost table and context differ in roster size"));
    }
    match assignment.iter().find(|&&d| d >= ctx.device_count() || !ctx.is_active(d)) {
        Some(&d) => Err(Error::DeviceUnavailable(d)),
        None => Ok(()),
    }
}

pub fn annotate(assignment: &[usize], table: &CostTable, ctx: &ContextSnapshot) -> Result<CombinationVertex> {
    let (exe, tran) = predict_scheme_latency(assignment, table, ctx)?;
    let n = ctx.device_count();
    let mut mem_mb = vec![0.0; n];
    let mut peak = vec![0u64; n];
    let mut compute_mflops = vec![0.0; n];
    for (i, &d) in assignment.iter().enumerate() {
        mem_mb[d] += table.param_bytes[i] as f64 / MB;
        peak[d] = peak[d].max(table.peak_bytes[i]);
        compute_mflops[d] += table.mflops[i];
    }
    for (m, p) in mem_mb.iter_mut().zip(&peak) {
        *m += *p as f64 / MB;
    }
    Ok(CombinationVertex {
        assignment: assignment.to_vec(),
        latency_ms: exe + tran,
        exe_ms: exe,
        tran_ms: tran,
        mem_mb,
        compute_mflops,
    })
}

/// Locations an atom may occupy: the mobile device and every active edge.
pub fn locations(ctx: &ContextSnapshot) -> Vec<usize> {
    std::iter::once(LOCAL).chain(ctx.active_edges().filter(|&d| d < ctx.device_count())).collect()
}

/// Assignments that move exactly one atom to another active location,
/// generated lazily in (atom, location) order.
pub fn neighbors<'a>(assignment: &'a [usize], ctx: &ContextSnapshot) -> impl Iterator<Item = Vec<usize>> + 'a {
    let locs = locations(ctx);
    (0..assignment.len()).flat_map(move |i| {
        let locs = locs.clone();
        locs.into_iter().filter(move |&d| d != assignment[i]).map(move |d| {
            let mut next = assignment.to_vec();
            next[i] = d;
            next
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePriorities {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for DistancePriorities {
    fn default() -> Self {
        DistancePriorities { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl DistancePriorities {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().all(|&w| w >= 0.0) && all.iter().any(|&w| w > 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("priorities must be non-negative with at least one positive"))
        }
    }
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Weighted Euclidean size of the constraint violations; 0 iff the vertex
/// meets the latency requirement and every budget.
pub fn distance(v: &CombinationVertex, ctx: &ContextSnapshot, p: &DistancePriorities) -> f64 {
    let t = hinge(v.latency_ms - ctx.latency_req_ms);
    let over = |usage: &[f64], budget: &[f64]| -> f64 {
        usage.iter().zip(budget).map(|(u, b)| if u > b { (u - b).powi(2) } else { 0.0 }).sum()
    };
    let c = over(&v.compute_mflops, &ctx.compute_budget_mflops);
    let m = over(&v.mem_mb, &ctx.mem_budget_mb);
    let term = |w: f64, x: f64| if w == 0.0 { 0.0 } else { w * x };
    (term(p.alpha, t * t) + term(p.beta, c) + term(p.gamma, m)).sqrt()
}

/// Benefit of a whole scheme against running everything on the mobile device.
pub fn scheme_benefit(v: &CombinationVertex, table: &CostTable, ctx: &ContextSnapshot, w: &BenefitWeights) -> f64 {
    latency_benefit(table.local_latency(), v.exe_ms, v.tran_ms, ctx.latency_req_ms, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    pub mu_d: f64,
    pub max_expansions: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { k: 8, mu_d: 0.0, max_expansions: 10_000 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || !(self.mu_d >= 0.0) {
            return Err(Error::invalid("search needs k >= 1 and mu_d >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Approach,
    Improve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRound {
    pub phase: Phase,
    pub expanded: Vec<Vec<usize>>,
    pub visited: usize,
    pub best_distance: f64,
    /// Best feasible benefit after the round; `None` while nothing is feasible.
    pub best_benefit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub vertex: CombinationVertex,
    pub feasible: bool,
    pub distance: f64,
    pub benefit: f64,
    pub expansions: usize,
    pub visited: usize,
    pub rounds: Vec<SearchRound>,
}

struct Node {
    v: CombinationVertex,
    d: f64,
    benefit: f64,
    feasible: bool,
    expanded: bool,
}

fn by_distance(a: &Node, b: &Node) -> Ordering {
    a.d.total_cmp(&b.d).then_with(|| a.v.assignment.cmp(&b.v.assignment))
}

/// Feasible vertices by benefit first, then infeasible ones by distance.
fn by_benefit(a: &Node, b: &Node) -> Ordering {
    match (a.feasible, b.feasible) {
        (true, true) => b.benefit.total_cmp(&a.benefit).then_with(|| by_distance(a, b)),
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (false, false) => by_distance(a, b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

type DistanceEntry = Reverse<(Key, Vec<usize>, usize)>;
type BenefitEntry = Reverse<(bool, Key, Key, Vec<usize>, usize)>;

struct Graph<'a> {
    table: &'a CostTable,
    ctx: &'a ContextSnapshot,
    priorities: &'a DistancePriorities,
    weights: &'a BenefitWeights,
    k: usize,
    mu_d: f64,
    nodes: Vec<Node>,
    index: HashMap<Vec<usize>, usize>,
    expansions: usize,
    by_distance: BinaryHeap<DistanceEntry>,
    by_benefit: BinaryHeap<BenefitEntry>,
    /// Unexpanded infeasible vertices by benefit.
    infeasible: BinaryHeap<(Key, Reverse<usize>)>,
    /// The `k` best feasible benefits seen.
    top_k: BinaryHeap<Reverse<Key>>,
    best: Option<usize>,
    closest: usize,
}

impl Graph<'_> {
    fn visit(&mut self, assignment: Vec<usize>) -> Result<()> {
        if self.index.contains_key(&assignment) {
            return Ok(());
        }
        let v = annotate(&assignment, self.table, self.ctx)?;
        let d = distance(&v, self.ctx, self.priorities);
        let benefit = scheme_benefit(&v, self.table, self.ctx, self.weights);
        let feasible = d <= self.mu_d;
        let id = self.nodes.len();
        self.index.insert(assignment.clone(), id);
        self.by_distance.push(Reverse((Key(d), assignment.clone(), id)));
        let primary = if feasible { -benefit } else { d };
        self.by_benefit.push(Reverse((!feasible, Key(primary), Key(d), assignment, id)));
        if feasible {
            self.top_k.push(Reverse(Key(benefit)));
            if self.top_k.len() > self.k {
                self.top_k.pop();
            }
        } else {
            self.infeasible.push((Key(benefit), Reverse(id)));
        }
        self.nodes.push(Node { v, d, benefit, feasible, expanded: false });
        if id > 0 && by_distance(&self.nodes[id], &self.nodes[self.closest]) == Ordering::Less {
            self.closest = id;
        }
        if feasible && self.best.is_none_or(|b| by_benefit(&self.nodes[id], &self.nodes[b]) == Ordering::Less) {
            self.best = Some(id);
        }
        Ok(())
    }

    fn pop_by_distance(&mut self) -> Option<usize> {
        while let Some(Reverse((_, _, id))) = self.by_distance.pop() {
            if !self.nodes[id].expanded {
                return Some(id);
            }
        }
        None
    }

    fn pop_by_benefit(&mut self) -> Option<usize> {
        while let Some(Reverse((_, _, _, _, id))) = self.by_benefit.pop() {
            if !self.nodes[id].expanded {
                return Some(id);
            }
        }
        None
    }

    fn expand(&mut self, id: usize) -> Result<Vec<usize>> {
        self.nodes[id].expanded = true;
        self.expansions += 1;
        let a = self.nodes[id].v.assignment.clone();
        for next in neighbors(&a, self.ctx) {
            self.visit(next)?;
        }
        Ok(a)
    }

    /// Benefit a new feasible vertex must beat to enter the top `k`.
    fn entry_bar(&self) -> f64 {
        match self.top_k.peek() {
            Some(Reverse(Key(b))) if self.top_k.len() == self.k => *b,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Whether an unexpanded infeasible vertex would beat the incumbent.
    fn promising(&mut self) -> bool {
        let bar = self.best.map_or(f64::NEG_INFINITY, |b| self.nodes[b].benefit);
        while let Some(&(Key(b), Reverse(id))) = self.infeasible.peek() {
            if !self.nodes[id].expanded {
                return b > bar;
            }
            self.infeasible.pop();
        }
        false
    }

    fn round(&self, phase: Phase, expanded: Vec<Vec<usize>>) -> SearchRound {
        SearchRound {
            phase,
            expanded,
            visited: self.nodes.len(),
            best_distance: self.nodes[self.closest].d,
            best_benefit: self.best.map(|i| self.nodes[i].benefit),
        }
    }
}

/// Starting from `current`, first walks toward the feasible region by
/// distance, then improves benefit among feasible vertices until a full
/// round of expansions brings no gain. Returns the best feasible vertex, or
/// the closest vertex flagged infeasible.
pub fn adaptive_search(
    current: &[usize],
    table: &CostTable,
    ctx: &ContextSnapshot,
    priorities: &DistancePriorities,
    weights: &BenefitWeights,
    params: &SearchParams,
) -> Result<SearchOutcome> {
    table.validate()?;
    ctx.validate()?;
    priorities.validate()?;
    weights.validate()?;
    params.validate()?;
    let mut g = Graph {
        table,
        ctx,
        priorities,
        weights,
        k: params.k,
        mu_d: params.mu_d,
        nodes: Vec::new(),
        index: HashMap::new(),
        expansions: 0,
        by_distance: BinaryHeap::new(),
        by_benefit: BinaryHeap::new(),
        infeasible: BinaryHeap::new(),
        top_k: BinaryHeap::new(),
        best: None,
        closest: 0,
    };
    g.visit(current.to_vec())?;
    let mut rounds = Vec::new();

    // Approach: expand the k closest vertices per round until one is feasible.
    while g.best.is_none() && g.expansions < params.max_expansions {
        let mut front = Vec::new();
        while front.len() < params.k {
            match g.pop_by_distance() {
                Some(id) => front.push(id),
                None => break,
            }
        }
        if front.is_empty() {
            break;
        }
        let mut expanded = Vec::new();
        for id in front {
            if g.expansions >= params.max_expansions {
                break;
            }
            expanded.push(g.expand(id)?);
        }
        rounds.push(g.round(Phase::Approach, expanded));
    }

    // Improve: best-first, re-ranked after every expansion. Stops once a full
    // round of k expansions neither raises the best benefit nor brings a new
    // vertex into the feasible top k, and no unexpanded infeasible vertex
    // outscores the incumbent.
    if g.best.is_some() {
        let mut stale = 0;
        let mut expanded = Vec::new();
        while g.expansions < params.max_expansions && (stale < params.k || g.promising()) {
            let Some(next) = g.pop_by_benefit() else { break };
            let before = g.best.map(|b| g.nodes[b].benefit);
            let bar = g.entry_bar();
            let seen = g.nodes.len();
            expanded.push(g.expand(next)?);
            let after = g.best.map(|b| g.nodes[b].benefit);
            let entered = g.nodes[seen..].iter().any(|n| n.feasible && n.benefit > bar);
            if after > before || entered {
                stale = 0;
            } else {
                stale += 1;
            }
            if expanded.len() == params.k {
                rounds.push(g.round(Phase::Improve, std::mem::take(&mut expanded)));
            }
        }
        if !expanded.is_empty() {
            rounds.push(g.round(Phase::Improve, expanded));
        }
    }

    let (pick, feasible) = match g.best {
        Some(i) => (i, true),
        None => (g.closest, false),
    };
    let node = &g.nodes[pick];
    Ok(SearchOutcome {
        vertex: node.v.clone(),
        feasible,
        distance: node.d,
        benefit: node.benefit,
        expansions: g.expansions,
        visited: g.nodes.len(),
        rounds,
    })
}

/// Every assignment over the active locations, in lexicographic order.
pub fn enumerate_assignments(atoms: usize, ctx: &ContextSnapshot) -> Vec<Vec<usize>> {
    let locs = locations(ctx);
    let mut out = vec![Vec::new()];
    for _ in 0..atoms {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                locs.iter().map(move |&d| {
                    let mut next = prefix.clone();
                    next.push(d);
                    next
                })
            })
            .collect();
    }
    out
}
