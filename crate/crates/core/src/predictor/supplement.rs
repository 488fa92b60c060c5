//! Adaptive supplementary sampling: find grid cells where the forest misses
//! the ±10% band too often, sample more there, retrain, repeat.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{ForestModel, KindForest};
use super::metrics::evaluate_pairs;
use super::sampling::{cell_key, grid_regions, Region};
use super::{collect_samples, MemPolicy};
use crate::cost::DeviceProfile;
use crate::error::{Error, Result};
use crate::graph::{OpConfig, OperatorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplementParams {
    /// Required per-cell fraction of holdout predictions within ±10%.
    pub acc_threshold: f64,
    /// Bins per continuous variable.
    pub region_grid: usize,
    pub max_rounds: usize,
    /// Samples drawn in each failing cell per round.
    pub per_cell: usize,
    /// Cells with fewer holdout samples are not judged.
    pub min_cell_holdout: usize,
}

impl Default for SupplementParams {
    fn default() -> Self {
        SupplementParams { acc_threshold: 0.9, region_grid: 4, max_rounds: 3, per_cell: 64, min_cell_holdout: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub region: Region,
    pub holdout: usize,
    pub acc10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplementRound {
    pub failing: Vec<CellStat>,
    /// Configurations drawn this round.
    pub drawn: Vec<OpConfig>,
    /// Training-set size per kind after the round.
    pub train_sizes: BTreeMap<OperatorKind, usize>,
    /// Holdout ±10% accuracy over all kinds after retraining.
    pub acc10: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplementReport {
    pub initial_acc10: f64,
    pub final_acc10: f64,
    pub rounds: Vec<SupplementRound>,
    pub supplementary_samples: usize,
}

fn holdout_acc10(model: &ForestModel) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = model.holdout().map(|s| (s.latency_ms, model.predict(&s.config).unwrap_or(0.0))).collect();
    if pairs.is_empty() {
        return Ok(1.0);
    }
    Ok(evaluate_pairs(&pairs)?.acc10)
}

/// Grid cells of one kind whose holdout ±10% accuracy is below the threshold.
pub fn failing_cells(forest: &KindForest, params: &SupplementParams) -> Vec<CellStat> {
    let mut cells: BTreeMap<Vec<u32>, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &forest.holdout {
        cells.entry(cell_key(&s.config, params.region_grid)).or_default().push((s.latency_ms, forest.predict(&s.config)));
    }
    let regions = grid_regions(forest.kind, params.region_grid);
    let mut failing = Vec::new();
    for region in regions {
        let Some(first) = forest.holdout.iter().find(|s| region.contains(&s.config)) else {
            continue;
        };
        let pairs = &cells[&cell_key(&first.config, params.region_grid)];
        if pairs.len() < params.min_cell_holdout {
            continue;
        }
        let acc10 = evaluate_pairs(pairs).map_or(0.0, |m| m.acc10);
        if acc10 < params.acc_threshold {
            failing.push(CellStat { region, holdout: pairs.len(), acc10 });
        }
    }
    failing
}

/// Runs up to `max_rounds` rounds of supplementary sampling against the
/// oracle of `device`. Samples are only ever added. Each round's retrained
/// model is kept only if it does not lower holdout ±10% accuracy; the
/// holdout set itself never changes.
pub fn adaptive_supplement(
    model: ForestModel,
    device: &DeviceProfile,
    params: &SupplementParams,
    seed: u64,
) -> Result<(ForestModel, SupplementReport)> {
    if !(params.acc_threshold > 0.0 && params.acc_threshold <= 1.0) || params.region_grid == 0 {
        return Err(Error::invalid("accuracy threshold must be in (0, 1] and the grid non-empty"));
    }
    let initial = holdout_acc10(&model)?;
    let mut report =
        SupplementReport { initial_acc10: initial, final_acc10: initial, rounds: Vec::new(), supplementary_samples: 0 };
    let mut best = model;
    let mut best_acc = initial;
    for round in 0..params.max_rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (round as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut failing_all = Vec::new();
        let mut drawn_all = Vec::new();
        let mut candidate = best.clone();
        for (kind, forest) in &best.kinds {
            let failing = failing_cells(forest, params);
            if failing.is_empty() {
                continue;
            }
            let drawn: Vec<OpConfig> = failing
                .iter()
                .flat_map(|c| (0..params.per_cell).map(|_| c.region.draw(&mut rng)).collect::<Vec<_>>())
                .collect();
            let extra = collect_samples(&drawn, device, &MemPolicy::Ample)?;
            let mut train = forest.train.clone();
            train.extend(extra);
            let refit = KindForest::fit(*kind, train, forest.holdout.clone(), &forest.params, forest.seed)?;
            candidate.kinds.insert(*kind, refit);
            failing_all.extend(failing);
            drawn_all.extend(drawn);
        }
        if drawn_all.is_empty() {
            break;
        }
        let acc = holdout_acc10(&candidate)?;
        let accepted = acc >= best_acc;
        report.supplementary_samples += drawn_all.len();
        report.rounds.push(SupplementRound {
            failing: failing_all,
            drawn: drawn_all,
            train_sizes: candidate.kinds.iter().map(|(k, f)| (*k, f.n_train)).collect(),
            acc10: acc,
            accepted,
        });
        if !accepted {
            break;
        }
        best = candidate;
        best_acc = acc;
    }
    report.final_acc10 = best_acc;
    Ok((best, report))
}
