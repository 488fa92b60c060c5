//! Once-for-all pre-partition: score every single-tensor cut point by its
//! latency benefit under a reference context, keep the positive ones, and
//! group the operators between kept cuts into atoms.

use serde::{Deserialize, Serialize};

use crate::context::{ContextSnapshot, LOCAL};
use crate::cost::DeviceProfile;
use crate::error::{Error, Result};
use crate::graph::{valid_cut_points, CutPoint, DnnGraph, OperatorNode};
use crate::predictor::LatencyEstimator;
use crate::trace::constant_transmission_ms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenefitWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for BenefitWeights {
    fn default() -> Self {
        BenefitWeights { lambda1: 1.0, lambda2: 1.0 }
    }
}

impl BenefitWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda1 + self.lambda2 > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("benefit weights must be non-negative with a positive sum"))
        }
    }
}

/// `λ1·ln((t_dev − t_exe)/t_tran) − λ2·[t_exe + t_tran > t_user]`, or −∞
/// when offloading cannot accelerate (`t_exe ≥ t_dev`) or nothing is sent.
pub fn latency_benefit(t_dev: f64, t_exe: f64, t_tran: f64, t_user: f64, w: &BenefitWeights) -> f64 {
    let gain = t_dev - t_exe;
    if !(gain > 0.0) || !(t_tran > 0.0) {
        return f64::NEG_INFINITY;
    }
    let late = if t_exe + t_tran - t_user > 0.0 { 1.0 } else { 0.0 };
    w.lambda1 * (gain / t_tran).ln() - w.lambda2 * late
}

/// Benefit of one cut point: prefix local, suffix on the best active edge device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutEvaluation {
    pub cut: CutPoint,
    pub t_dev: f64,
    pub t_exe: f64,
    pub t_tran: f64,
    /// Roster index of the edge device hosting the suffix; `None` without edges.
    pub device: Option<usize>,
    pub benefit: f64,
}

/// Per-operator predicted latency on each roster device, in topological order.
pub struct OpLatencies {
    /// `[device][position]`
    pub latency: Vec<Vec<f64>>,
}

impl OpLatencies {
    pub fn compute(
        graph: &DnnGraph,
        devices: &[DeviceProfile],
        ctx: &ContextSnapshot,
        estimator: &dyn LatencyEstimator,
    ) -> Result<Self> {
        if devices.len() != ctx.device_count() {
            return Err(Error::invalid("device roster and context budgets differ in length"));
        }
        let latency = devices
            .iter()
            .enumerate()
            .map(|(j, dev)| {
                graph
                    .topo_order()
                    .iter()
                    .map(|&id| estimator.operator_latency(&graph.node(id).config, dev, ctx.mem_budget_mb[j]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(OpLatencies { latency })
    }
}

/// Scores every valid cut point of `graph` under `ctx`.
pub fn evaluate_cuts(
    graph: &DnnGraph,
    devices: &[DeviceProfile],
    ctx: &ContextSnapshot,
    estimator: &dyn LatencyEstimator,
    weights: &BenefitWeights,
) -> Result<Vec<CutEvaluation>> {
    weights.validate()?;
    ctx.validate()?;
    let lat = OpLatencies::compute(graph, devices, ctx, estimator)?;
    let n = graph.len();
    let prefix: Vec<Vec<f64>> = lat
        .latency
        .iter()
        .map(|row| {
            let mut acc = vec![0.0; n + 1];
            for (i, v) in row.iter().enumerate() {
                acc[i + 1] = acc[i] + v;
            }
            acc
        })
        .collect();
    let t_dev = prefix[LOCAL][n];
    let result_bytes = graph.output_bytes();
    Ok(valid_cut_points(graph)
        .into_iter()
        .map(|cut| {
            let split = cut.index + 1;
            let t_tran = constant_transmission_ms(cut.crossing_bytes, ctx.bandwidth_mbps)
                + constant_transmission_ms(result_bytes, ctx.bandwidth_mbps);
            let mut best = CutEvaluation {
                cut,
                t_dev,
                t_exe: t_dev,
                t_tran,
                device: None,
                benefit: f64::NEG_INFINITY,
            };
            for e in ctx.active_edges() {
                let t_exe = prefix[LOCAL][split] + (prefix[e][n] - prefix[e][split]);
                let b = latency_benefit(t_dev, t_exe, t_tran, ctx.latency_req_ms, weights);
                if best.device.is_none() || b > best.benefit {
                    best = CutEvaluation { cut, t_dev, t_exe, t_tran, device: Some(e), benefit: b };
                }
            }
            best
        })
        .collect())
}

/// A contiguous single-entry/single-exit group of operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub id: usize,
    pub ops: Vec<OperatorNode>,
    pub param_bytes: u64,
    pub flops: u64,
    pub boundary_in_bytes: u64,
    pub boundary_out_bytes: u64,
    /// `(hw, channels)` entering the atom; `hw` is 0 for flat tensors.
    pub boundary_in_shape: (u32, u32),
    pub boundary_out_shape: (u32, u32),
}

impl Atom {
    pub fn op_ids(&self) -> Vec<usize> {
        self.ops.iter().map(|o| o.id).collect()
    }

    pub fn mflops(&self) -> f64 {
        self.flops as f64 / 1e6
    }

    /// Largest tensor crossing the atom boundary.
    pub fn peak_boundary_bytes(&self) -> u64 {
        self.boundary_in_bytes.max(self.boundary_out_bytes)
    }

    pub fn predicted_latency(
        &self,
        estimator: &dyn LatencyEstimator,
        device: &DeviceProfile,
        avail_mem_mb: f64,
    ) -> Result<f64> {
        crate::predictor::predict_ops_latency(estimator, self.ops.iter().map(|o| &o.config), device, avail_mem_mb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub model: String,
    pub atoms: Vec<Atom>,
    pub ref_ctx: ContextSnapshot,
    pub weights: BenefitWeights,
    /// Topological positions after which a cut was kept.
    pub retained: Vec<usize>,
}

impl PartitionScheme {
    pub fn total_param_bytes(&self) -> u64 {
        self.atoms.iter().map(|a| a.param_bytes).sum()
    }

    /// Operator ids in atom order.
    pub fn op_order(&self) -> Vec<usize> {
        self.atoms.iter().flat_map(|a| a.op_ids()).collect()
    }
}

fn shape_of(node: &OperatorNode) -> (u32, u32) {
    (node.out_hw, node.config.cout)
}

/// Groups the graph's operators into atoms separated by the cut points at
/// the given topological positions.
pub fn atoms_from_cuts(graph: &DnnGraph, retained: &[CutPoint]) -> Vec<Atom> {
    let order = graph.topo_order();
    let mut bounds: Vec<usize> = retained.iter().map(|c| c.index + 1).collect();
    bounds.push(order.len());
    let mut atoms = Vec::with_capacity(bounds.len());
    let mut start = 0;
    for (i, &end) in bounds.iter().enumerate() {
        let ops: Vec<OperatorNode> = order[start..end].iter().map(|&id| graph.node(id).clone()).collect();
        let (in_bytes, in_shape) = if i == 0 {
            (graph.input_bytes(), graph.input_shape())
        } else {
            let cut = &retained[i - 1];
            (cut.crossing_bytes, shape_of(graph.node(cut.crossing_edge.from)))
        };
        let (out_bytes, out_shape) = if i < retained.len() {
            let cut = &retained[i];
            (cut.crossing_bytes, shape_of(graph.node(cut.crossing_edge.from)))
        } else {
            (graph.output_bytes(), shape_of(graph.sink()))
        };
        atoms.push(Atom {
            id: i,
            param_bytes: ops.iter().map(|o| o.param_bytes).sum(),
            flops: ops.iter().map(|o| o.flops).sum(),
            ops,
            boundary_in_bytes: in_bytes,
            boundary_out_bytes: out_bytes,
            boundary_in_shape: in_shape,
            boundary_out_shape: out_shape,
        });
        start = end;
    }
    atoms
}

/// Keeps the cut points with positive benefit under `ref_ctx`.
pub fn prepartition(
    graph: &DnnGraph,
    devices: &[DeviceProfile],
    ref_ctx: &ContextSnapshot,
    estimator: &dyn LatencyEstimator,
    weights: &BenefitWeights,
) -> Result<PartitionScheme> {
    let evals = evaluate_cuts(graph, devices, ref_ctx, estimator, weights)?;
    let kept: Vec<CutPoint> = evals.iter().filter(|e| e.benefit > 0.0).map(|e| e.cut).collect();
    Ok(PartitionScheme {
        model: graph.name().to_string(),
        atoms: atoms_from_cuts(graph, &kept),
        ref_ctx: ref_ctx.clone(),
        weights: *weights,
        retained: kept.iter().map(|c| c.index).collect(),
    })
}

/// Number of kept cut points at a given reference bandwidth.
fn retained_at(
    graph: &DnnGraph,
    devices: &[DeviceProfile],
    ctx: &ContextSnapshot,
    estimator: &dyn LatencyEstimator,
    weights: &BenefitWeights,
    mbps: f64,
) -> Result<usize> {
    let probe = ContextSnapshot { bandwidth_mbps: mbps, ..ctx.clone() };
    Ok(evaluate_cuts(graph, devices, &probe, estimator, weights)?.iter().filter(|e| e.benefit > 0.0).count())
}

/// Smallest bandwidth (within bisection precision) at which at least
/// `count` cut points are kept, searching `[lo, hi]` Mbps.
fn bandwidth_for_count(
    graph: &DnnGraph,
    devices: &[DeviceProfile],
    ctx: &ContextSnapshot,
    estimator: &dyn LatencyEstimator,
    weights: &BenefitWeights,
    count: usize,
    (lo, hi): (f64, f64),
) -> Result<Option<f64>> {
    if retained_at(graph, devices, ctx, estimator, weights, hi)? < count {
        return Ok(None);
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if retained_at(graph, devices, ctx, estimator, weights, mid.exp())? >= count {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(Some(b.exp()))
}

/// A reference bandwidth under which pre-partition yields exactly
/// `target_atoms` atoms, if one exists. Cut benefits never decrease with
/// bandwidth, so the kept count is monotone and bisection applies; the
/// result sits geometrically between the two neighbouring thresholds.
pub fn bandwidth_for_atom_count(
    graph: &DnnGraph,
    devices: &[DeviceProfile],
    ctx: &ContextSnapshot,
    estimator: &dyn LatencyEstimator,
    weights: &BenefitWeights,
    target_atoms: usize,
) -> Result<Option<f64>> {
    if target_atoms == 0 {
        return Err(Error::invalid("atom count must be positive"));
    }
    let range = (1e-6, 1e7);
    let k = target_atoms - 1;
    let low = if k == 0 { Some(range.0) } else { bandwidth_for_count(graph, devices, ctx, estimator, weights, k, range)? };
    let Some(low) = low else { return Ok(None) };
    let high = bandwidth_for_count(graph, devices, ctx, estimator, weights, k + 1, range)?.unwrap_or(range.1);
    let mid = (low * high).sqrt();
    Ok((retained_at(graph, devices, ctx, estimator, weights, mid)? == k).then_some(mid))
}

/// Sizes of the deployment search space at operator, layer and atom
/// granularity: `(edges + 1)^units`, `None` when it overflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceCounts {
    pub locations: u32,
    pub operators: usize,
    pub layers: usize,
    pub atoms: usize,
    pub operator_space: Option<u128>,
    pub layer_space: Option<u128>,
    pub atom_space: Option<u128>,
}

pub fn search_space_counts(graph: &DnnGraph, scheme: &PartitionScheme, edge_devices: usize) -> SearchSpaceCounts {
    let base = edge_devices as u128 + 1;
    let pow = |e: usize| u32::try_from(e).ok().and_then(|e| base.checked_pow(e));
    SearchSpaceCounts {
        locations: base as u32,
        operators: graph.len(),
        layers: graph.layer_count(),
        atoms: scheme.atoms.len(),
        operator_space: pow(graph.len()),
        layer_space: pow(graph.layer_count()),
        atom_space: pow(scheme.atoms.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benefit_examples() {
        let w = BenefitWeights::default();
        assert!((latency_benefit(100.0, 60.0, 10.0, 200.0, &w) - 4f64.ln()).abs() < 1e-12);
        let late = latency_benefit(100.0, 60.0, 10.0, 50.0, &w);
        assert!((late - (4f64.ln() - 1.0)).abs() < 1e-12);
        assert_eq!(latency_benefit(100.0, 100.0, 10.0, 200.0, &w), f64::NEG_INFINITY);
        assert_eq!(latency_benefit(100.0, 60.0, 0.0, 200.0, &w), f64::NEG_INFINITY);
    }

    #[test]
    fn weights_validation() {
        assert!(BenefitWeights { lambda1: 0.0, lambda2: 0.0 }.validate().is_err());
        assert!(BenefitWeights { lambda1: -1.0, lambda2: 2.0 }.validate().is_err());
    }
}
