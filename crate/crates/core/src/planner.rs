//! Offloading plans: the cheapest ordered sequence of single-atom moves from
//! the current placement to the target one, cheapest move first.
//!
//! The search runs Dijkstra over the placements in which every atom sits at
//! either its current or its target location. Any path through another
//! location only adds non-negative transfer weight, so this hypercube holds
//! a shortest path of the full combination graph.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::context::{ContextSnapshot, LOCAL};
use crate::error::{Error, Result};
use crate::trace::constant_transmission_ms;

/// Largest number of differing atoms planned by explicit Dijkstra.
pub const MAX_HYPERCUBE_ATOMS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadMove {
    pub atom: usize,
    pub from: usize,
    pub to: usize,
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadPlan {
    pub moves: Vec<OffloadMove>,
    pub total_overhead_ms: f64,
}

/// Time to ship an atom's manifest and parameters to `to`. Nothing is sent
/// when the atom is already there, when `to` is the mobile device (which
/// holds the whole model) or when `to` has the atom cached.
pub fn move_overhead(offload_bytes: u64, from: usize, to: usize, cached: bool, bandwidth_mbps: f64) -> f64 {
    if to == from || to == LOCAL || cached {
        0.0
    } else {
        constant_transmission_ms(offload_bytes, bandwidth_mbps)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Single-source shortest distances over the `h`-dimensional hypercube where
/// setting bit `j` costs `w(mask, j)`. With `reverse`, distances run to the
/// full mask instead, following edges backwards.
fn hypercube_dijkstra(h: usize, w: &dyn Fn(u32, usize) -> f64, reverse: bool) -> Vec<f64> {
    let full: u32 = (1u32 << h) - 1;
    let mut dist = vec![f64::INFINITY; 1usize << h];
    let source = if reverse { full } else { 0 };
    dist[source as usize] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((Cost(0.0), source)));
    while let Some(Reverse((Cost(d), mask))) = heap.pop() {
        if d > dist[mask as usize] {
            continue;
        }
        for j in 0..h {
            let bit = 1u32 << j;
            let (next, weight) = if reverse {
                if mask & bit == 0 {
                    continue;
                }
                (mask & !bit, w(mask & !bit, j))
            } else {
                if mask & bit != 0 {
                    continue;
                }
                (mask | bit, w(mask, j))
            };
            let nd = d + weight;
            if nd < dist[next as usize] {
                dist[next as usize] = nd;
                heap.push(Reverse((Cost(nd), next)));
            }
        }
    }
    dist
}

/// Plans the moves from `current` to `target` given each atom's overhead for
/// reaching its target location. Among minimum-total orderings the plan is
/// the one whose running overhead is lexicographically smallest, so cheap
/// atoms land first; equal overheads go in atom order.
pub fn plan(current: &[usize], target: &[usize], overhead: &dyn Fn(usize, usize) -> f64) -> Result<OffloadPlan> {
    if current.len() != target.len() {
        return Err(Error::invalid(format!(
            "current placement covers {} atoms, target covers {}",
            current.len(),
            target.len()
        )));
    }
    let diff: Vec<usize> = (0..current.len()).filter(|&i| current[i] != target[i]).collect();
    let cost: Vec<f64> = diff.iter().map(|&i| overhead(i, target[i])).collect();
    if cost.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::invalid("move overheads must be non-negative"));
    }
    let make = |j: usize| OffloadMove { atom: diff[j], from: current[diff[j]], to: target[diff[j]], overhead_ms: cost[j] };

    let order: Vec<usize> = if diff.len() > MAX_HYPERCUBE_ATOMS {
        // Move weights do not depend on the order, so every ordering has the
        // same total and the lexicographic rule reduces to sorting.
        let mut order: Vec<usize> = (0..diff.len()).collect();
        order.sort_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(diff[a].cmp(&diff[b])));
        order
    } else {
        let h = diff.len();
        let w = |_mask: u32, j: usize| cost[j];
        let from_start = hypercube_dijkstra(h, &w, false);
        let to_target = hypercube_dijkstra(h, &w, true);
        let total = to_target[0];
        let tol = 1e-9 * total.max(1.0);
        let mut mask = 0u32;
        let mut order = Vec::with_capacity(h);
        for _ in 0..h {
            let next = (0..h)
                .filter(|&j| mask & (1 << j) == 0)
                .filter(|&j| {
                    let via = from_start[mask as usize] + w(mask, j) + to_target[(mask | 1 << j) as usize];
                    (via - total).abs() <= tol
                })
                .min_by(|&a, &b| w(mask, a).total_cmp(&w(mask, b)).then(diff[a].cmp(&diff[b])))
                .expect("a shortest path continues from every vertex on it");
            order.push(next);
            mask |= 1 << next;
        }
        order
    };
    let moves: Vec<OffloadMove> = order.into_iter().map(make).collect();
    let total_overhead_ms = moves.iter().fold(0.0, |acc, m| acc + m.overhead_ms);
    Ok(OffloadPlan { moves, total_overhead_ms })
}

/// Plans against a context: overheads at its bandwidth, with cache hits free.
/// Every location in `target` must be active.
pub fn plan_offload(
    current: &[usize],
    target: &[usize],
    offload_bytes: &[u64],
    cached: &dyn Fn(usize, usize) -> bool,
    ctx: &ContextSnapshot,
) -> Result<OffloadPlan> {
    if offload_bytes.len() != target.len() {
        return Err(Error::invalid("offload sizes do not match the atom set"));
    }
    if let Some(&d) = target.iter().find(|&&d| d >= ctx.device_count() || !ctx.is_active(d)) {
        return Err(Error::DeviceUnavailable(d));
    }
    plan(current, target, &|atom, to| {
        move_overhead(offload_bytes[atom], current[atom], to, cached(atom, to), ctx.bandwidth_mbps)
    })
}

/// Whether replaying `plan` turns `current` into `target` with every move
/// starting where the atom is and no atom moved twice.
pub fn verify_plan(plan: &OffloadPlan, current: &[usize], target: &[usize]) -> bool {
    if current.len() != target.len() {
        return false;
    }
    let mut placement = current.to_vec();
    let mut moved = vec![false; current.len()];
    for m in &plan.moves {
        if m.atom >= placement.len() || moved[m.atom] || m.from == m.to || placement[m.atom] != m.from {
            return false;
        }
        if !(m.overhead_ms >= 0.0) {
            return false;
        }
        moved[m.atom] = true;
        placement[m.atom] = m.to;
    }
    placement == target
}
