//! Twin and top-K selection under communication and computation budgets.
//!
//! Given the twins' lookup tables, an [`InclusionModel`] estimates how
//! likely each twin's top-K beam shortlist is to contain the true best
//! beam, per road region. [`select_twin_and_k`] then maximizes that
//! probability plus a budget-slack bonus, subject to strict communication
//! and computation constraints, in a single pass over twins and K.

use crate::pipeline::GroundTruthSet;
use crate::twin::{LookupEntry, TwinTable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default cap on the top-K search range.
pub const DEFAULT_K_MAX: usize = 12;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("K = {0} is outside the valid range")]
    InvalidK(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty input")]
    EmptyInput,
    #[error("no twin satisfies the communication and computation budgets")]
    NoFeasibleTwin,
}

/// Time cost of sweeping K candidate beams over the air.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommCostModel {
    /// 5G NR synchronization-signal bursts: each burst carries up to 32
    /// beams and costs `ssb_ms`; every extra burst waits `periodicity_ms`.
    Nr5g { periodicity_ms: f64, ssb_ms: f64 },
    /// A fixed per-beam sweep slot (802.11ad-style).
    Linear { per_beam_ms: f64 },
}

impl CommCostModel {
    /// Standard NR parameters: 20 ms periodicity, 5 ms burst.
    pub fn nr5g() -> Self {
        CommCostModel::Nr5g { periodicity_ms: 20.0, ssb_ms: 5.0 }
    }

    /// Default per-beam slot: a 1.27 ms exhaustive sweep spread over a
    /// 34-beam codebook.
    pub fn linear() -> Self {
        CommCostModel::Linear { per_beam_ms: 1.27 / 34.0 }
    }
}

/// Milliseconds to sweep `k` candidate beams under `model`.
pub fn comm_cost(model: &CommCostModel, k: usize) -> Result<f64, SelectorError> {
    if k < 1 {
        return Err(SelectorError::InvalidK(k));
    }
    Ok(match model {
        CommCostModel::Nr5g { periodicity_ms, ssb_ms } => {
            periodicity_ms * ((k - 1) / 32) as f64 + ssb_ms
        }
        CommCostModel::Linear { per_beam_ms } => k as f64 * per_beam_ms,
    })
}

/// Indices of the `k` largest values, descending, ties to the lower index.
/// `-inf` entries rank last. Top-K sets are nested in `k` by construction.
pub fn top_k_indices(values: &[f64], k: usize) -> Result<Vec<usize>, SelectorError> {
    if k < 1 || k > values.len() {
        return Err(SelectorError::InvalidK(k));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// The twin's best-K beam shortlist at one grid point.
pub fn top_k_beams(entry: &LookupEntry, k: usize) -> Result<Vec<usize>, SelectorError> {
    let values: Vec<f64> = entry.snr_db.iter().map(|&s| s as f64).collect();
    top_k_indices(&values, k)
}

/// How many beams of `values` sort strictly ahead of `beam` in top-K
/// order; equivalently, the smallest K for which `beam` is shortlisted,
/// minus one.
fn beam_rank(values: &[f32], beam: usize) -> usize {
    let v = values[beam];
    values
        .iter()
        .enumerate()
        .filter(|&(m, &s)| s.total_cmp(&v).is_gt() || (s.total_cmp(&v).is_eq() && m < beam))
        .count()
}

/// One road region's fitted inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBin {
    /// `probs[k - 1]` estimates the chance the true best beam is in the
    /// twin's top-k shortlist for samples in this region.
    pub probs: Vec<f64>,
    /// Ground-truth samples that landed in this region.
    pub samples: usize,
    /// No samples landed here; the scenario-wide estimate was inherited.
    pub inherited: bool,
}

/// Per-(twin, scenario) regions over that twin's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinBins {
    /// Trajectory range the regions cover, meters.
    pub start_m: f64,
    pub end_m: f64,
    pub regions: Vec<RegionBin>,
}

/// Region-binned empirical inclusion probabilities with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionModel {
    bins: BTreeMap<(u32, String), TwinBins>,
    pub region_width_m: f64,
    pub smoothing: f64,
}

impl InclusionModel {
    /// Probability that the true best beam is in the top-`k` shortlist of
    /// twin `twin_id` for a vehicle in `region`.
    pub fn probability(
        &self,
        twin_id: u32,
        scenario_id: &str,
        region: usize,
        k: usize,
    ) -> Option<f64> {
        let bins = self.bins.get(&(twin_id, scenario_id.to_string()))?;
        let bin = bins.regions.get(region)?;
        bin.probs.get(k - 1).copied()
    }

    /// The region a trajectory offset (meters) falls into.
    pub fn region_index(&self, twin_id: u32, scenario_id: &str, offset_m: f64) -> Option<usize> {
        let bins = self.bins.get(&(twin_id, scenario_id.to_string()))?;
        let clamped = offset_m.clamp(bins.start_m, bins.end_m);
        let idx = ((clamped - bins.start_m) / self.region_width_m) as usize;
        Some(idx.min(bins.regions.len().saturating_sub(1)))
    }

    /// All fitted regions for one twin, in spatial order.
    pub fn twin_bins(&self, twin_id: u32, scenario_id: &str) -> Option<&TwinBins> {
        self.bins.get(&(twin_id, scenario_id.to_string()))
    }

    /// Every fitted (twin_id, scenario_id) key.
    pub fn keys(&self) -> impl Iterator<Item = &(u32, String)> {
        self.bins.keys()
    }
}

/// Fit an [`InclusionModel`]: bin ground-truth samples into `region_width`
/// stretches of each twin's trajectory and count how often the true best
/// beam appears in the twin's top-K shortlist at the nearest grid entry,
/// Laplace-smoothed as `(hits + s) / (count + 2s)`. Regions with no
/// samples inherit the scenario-wide estimate and are flagged.
pub fn fit_inclusion_model(
    ground_truth: &GroundTruthSet,
    twins: &[TwinTable],
    region_width_m: f64,
    smoothing: f64,
) -> Result<InclusionModel, SelectorError> {
    if !(region_width_m > 0.0) {
        return Err(SelectorError::InvalidInput(format!(
            "region width must be positive, got {region_width_m}"
        )));
    }
    if smoothing < 0.0 {
        return Err(SelectorError::InvalidInput(format!(
            "smoothing must be non-negative, got {smoothing}"
        )));
    }

    let mut bins = BTreeMap::new();
    for twin in twins {
        let b = twin.table.n_beams as usize;
        let length = twin.grid.length();
        let n_regions = ((length / region_width_m).ceil() as usize).max(1);
        // rank_counts[region][r]: samples whose best beam ranks r-th in the
        // twin's shortlist order; the hit count at K is the prefix sum.
        let mut rank_counts = vec![vec![0usize; b]; n_regions];
        let mut totals = vec![0usize; n_regions];

        for record in &ground_truth.records {
            if record.scenario_id != twin.table.scenario_id {
                continue;
            }
            let Some(entry) = twin.entry_at(record.position) else {
                continue;
            };
            let best = crate::pipeline::exhaustive_sweep(&record.snr_db)
                .map_err(|e| SelectorError::InvalidInput(e.to_string()))?;
            if best >= b {
                return Err(SelectorError::InvalidInput(format!(
                    "ground-truth sample {} has {} beams, twin {} has {}",
                    record.sample_id,
                    record.snr_db.len(),
                    twin.table.twin_id,
                    b
                )));
            }
            let offset = twin.grid.offset_along(record.position);
            let region = (((offset / region_width_m) as usize).min(n_regions - 1)).max(0);
            rank_counts[region][beam_rank(&entry.snr_db, best)] += 1;
            totals[region] += 1;
        }

        let smoothed = |hits: usize, count: usize| -> f64 {
            if count == 0 && smoothing == 0.0 {
                0.0
            } else {
                (hits as f64 + smoothing) / (count as f64 + 2.0 * smoothing)
            }
        };
        // Scenario-wide estimate for regions no sample reached.
        let pooled_total: usize = totals.iter().sum();
        let mut pooled_hits = 0usize;
        let pooled: Vec<f64> = (0..b)
            .map(|r| {
                pooled_hits += rank_counts.iter().map(|c| c[r]).sum::<usize>();
                smoothed(pooled_hits, pooled_total)
            })
            .collect();

        let regions = (0..n_regions)
            .map(|g| {
                if totals[g] == 0 {
                    return RegionBin { probs: pooled.clone(), samples: 0, inherited: true };
                }
                let mut hits = 0usize;
                let probs = (0..b)
                    .map(|r| {
                        hits += rank_counts[g][r];
                        smoothed(hits, totals[g])
                    })
                    .collect();
                RegionBin { probs, samples: totals[g], inherited: false }
            })
            .collect();

        bins.insert(
            (twin.table.twin_id, twin.table.scenario_id.clone()),
            TwinBins { start_m: 0.0, end_m: length, regions },
        );
    }

    Ok(InclusionModel { bins, region_width_m, smoothing })
}

/// Budgets and context for one selection.
#[derive(Debug, Clone)]
pub struct SelectionConstraints {
    /// Strict upper bound on the candidate-sweep time, ms.
    pub comm_budget_ms: f64,
    /// Strict upper bound on the chosen twin's build cost, units.
    pub comp_budget: f64,
    /// Weight of the budget-slack bonus; 0 optimizes inclusion alone.
    pub alpha: f64,
    /// Vehicle position along the trajectory, meters.
    pub region_m: f64,
    pub scenario_id: String,
    /// Cap on the K search range (the codebook size still applies).
    pub k_max: usize,
}

impl SelectionConstraints {
    pub fn new(
        comm_budget_ms: f64,
        comp_budget: f64,
        alpha: f64,
        region_m: f64,
        scenario_id: &str,
    ) -> Self {
        SelectionConstraints {
            comm_budget_ms,
            comp_budget,
            alpha,
            region_m,
            scenario_id: scenario_id.to_string(),
            k_max: DEFAULT_K_MAX,
        }
    }

    fn validate(&self) -> Result<(), SelectorError> {
        if !(self.comm_budget_ms > 0.0) || !(self.comp_budget > 0.0) {
            return Err(SelectorError::InvalidInput(format!(
                "budgets must be positive, got comm {} ms, comp {}",
                self.comm_budget_ms, self.comp_budget
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(SelectorError::InvalidInput(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.k_max < 1 {
            return Err(SelectorError::InvalidInput("k_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`select_twin_and_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDecision {
    pub twin_id: u32,
    pub k: usize,
    /// Top-K shortlist at the grid entry nearest the vehicle, best first.
    pub beams: Vec<usize>,
    pub objective: f64,
    pub inclusion_probability: f64,
    pub comm_cost_ms: f64,
    pub comp_cost: f64,
}

/// Pick the twin and shortlist size maximizing
/// `p + (alpha/2)(1 - comm/comm_budget)(1 - comp/comp_budget)` subject to
/// `comm < comm_budget` and `comp < comp_budget` (both strict). One scan
/// over K per twin; ties prefer lower computation cost, then lower K, then
/// lower twin id.
pub fn select_twin_and_k(
    twins: &[TwinTable],
    model: &InclusionModel,
    cfg: &SelectionConstraints,
    comm: &CommCostModel,
) -> Result<SelectionDecision, SelectorError> {
    cfg.validate()?;
    if twins.is_empty() {
        return Err(SelectorError::EmptyInput);
    }

    let mut best: Option<SelectionDecision> = None;
    for twin in twins {
        if twin.table.scenario_id != cfg.scenario_id {
            continue;
        }
        let comp = twin.table.comp_cost.total;
        if comp >= cfg.comp_budget {
            continue;
        }
        let Some(region) =
            model.region_index(twin.table.twin_id, &cfg.scenario_id, cfg.region_m)
        else {
            continue;
        };
        let k_cap = (twin.table.n_beams as usize).min(cfg.k_max);
        for k in 1..=k_cap {
            let cost_ms = comm_cost(comm, k)?;
            if cost_ms >= cfg.comm_budget_ms {
                continue;
            }
            let Some(p) = model.probability(twin.table.twin_id, &cfg.scenario_id, region, k)
            else {
                continue;
            };
            let slack = (1.0 - cost_ms / cfg.comm_budget_ms) * (1.0 - comp / cfg.comp_budget);
            let objective = p + cfg.alpha / 2.0 * slack;
            let candidate_key = (comp, k, twin.table.twin_id);
            let wins = match &best {
                None => true,
                Some(cur) => match objective.total_cmp(&cur.objective) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Equal => {
                        candidate_key < (cur.comp_cost, cur.k, cur.twin_id)
                    }
                    std::cmp::Ordering::Less => false,
                },
            };
            if wins {
                let point = twin
                    .grid
                    .point_at_offset(cfg.region_m)
                    .ok_or_else(|| SelectorError::InvalidInput("twin grid is empty".into()))?;
                let entry = twin
                    .entry_at(point)
                    .ok_or_else(|| SelectorError::InvalidInput("twin table is empty".into()))?;
                best = Some(SelectionDecision {
                    twin_id: twin.table.twin_id,
                    k,
                    beams: top_k_beams(entry, k)?,
                    objective,
                    inclusion_probability: p,
                    comm_cost_ms: cost_ms,
                    comp_cost: comp,
                });
            }
        }
    }
    best.ok_or(SelectorError::NoFeasibleTwin)
}

/// Share of decisions that chose each twin, percent; sums to 100.
pub fn usage_breakdown(
    decisions: &[SelectionDecision],
) -> Result<BTreeMap<u32, f64>, SelectorError> {
    if decisions.is_empty() {
        return Err(SelectorError::EmptyInput);
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for d in decisions {
        *counts.entry(d.twin_id).or_default() += 1;
    }
    let total = decisions.len() as f64;
    Ok(counts.into_iter().map(|(id, n)| (id, 100.0 * n as f64 / total)).collect())
}
