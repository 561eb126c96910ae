//! Evaluation: top-K accuracy within a dB threshold, end-to-end latency
//! against an exhaustive sweep, and plot-ready inclusion heatmaps.

use crate::pipeline::{exhaustive_sweep, GroundTruthSet};
use crate::selector::{comm_cost, top_k_indices, CommCostModel, InclusionModel, SelectorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty SNR vector or sample set")]
    EmptyVector,
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid K: {0}")]
    InvalidK(usize),
    #[error("threshold must be non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("exhaustive baseline must be positive, got {0} ms")]
    NonPositiveBaseline(f64),
    #[error("no fitted bins for twin {twin_id} in scenario {scenario_id}")]
    UnknownTwin { twin_id: u32, scenario_id: String },
}

// comm_cost and top_k_indices can only fail with InvalidK from here.
fn from_selector(e: SelectorError) -> MetricsError {
    match e {
        SelectorError::InvalidK(k) => MetricsError::InvalidK(k),
        other => unreachable!("unexpected selector error in metrics: {other}"),
    }
}

/// Beams whose ground-truth SNR lies within `t_db` of the best beam's.
/// Unreachable beams (`-inf`) never qualify; if every beam is unreachable
/// the set degenerates to the argmax alone. An infinite threshold admits
/// every beam.
pub fn threshold_set(snr_db: &[f64], t_db: f64) -> Result<Vec<usize>, MetricsError> {
    if snr_db.is_empty() {
        return Err(MetricsError::EmptyVector);
    }
    if t_db.is_nan() || t_db < 0.0 {
        return Err(MetricsError::InvalidThreshold(t_db));
    }
    if t_db.is_infinite() {
        return Ok((0..snr_db.len()).collect());
    }
    let best = snr_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let favourable: Vec<usize> = (0..snr_db.len())
        .filter(|&m| snr_db[m].is_finite() && snr_db[m] >= best - t_db)
        .collect();
    if favourable.is_empty() {
        // Nothing reachable: fall back to the sweep winner so the set is
        // never empty and always contains the argmax.
        return Ok(vec![exhaustive_sweep(snr_db).expect("checked non-empty")]);
    }
    Ok(favourable)
}

/// One accuracy cell: top-K prediction judged within a T-dB margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyQuery {
    pub k: usize,
    pub t_db: f64,
}

impl AccuracyQuery {
    pub fn new(k: usize, t_db: f64) -> Result<Self, MetricsError> {
        if k < 1 {
            return Err(MetricsError::InvalidK(k));
        }
        if t_db.is_nan() || t_db < 0.0 {
            return Err(MetricsError::InvalidThreshold(t_db));
        }
        Ok(AccuracyQuery { k, t_db })
    }
}

/// Fraction of samples whose predicted top-K shortlist contains at least
/// one beam within `t_db` of the true best. Samples score independently,
/// so the batch runs in parallel with an order-free integer reduction.
pub fn acc_kt(
    gt: &GroundTruthSet,
    predicted: &[Vec<f64>],
    q: &AccuracyQuery,
) -> Result<f64, MetricsError> {
    AccuracyQuery::new(q.k, q.t_db)?;
    if gt.records.len() != predicted.len() {
        return Err(MetricsError::ShapeMismatch {
            expected: gt.records.len(),
            found: predicted.len(),
        });
    }
    if gt.records.is_empty() {
        return Err(MetricsError::EmptyVector);
    }
    let hits: u64 = gt
        .records
        .par_iter()
        .zip(predicted.par_iter())
        .map(|(record, scores)| -> Result<u64, MetricsError> {
            if record.snr_db.len() != scores.len() {
                return Err(MetricsError::ShapeMismatch {
                    expected: record.snr_db.len(),
                    found: scores.len(),
                });
            }
            let favourable = threshold_set(&record.snr_db, q.t_db)?;
            let shortlist = top_k_indices(scores, q.k).map_err(from_selector)?;
            Ok(shortlist.iter().any(|m| favourable.contains(m)) as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(hits as f64 / gt.records.len() as f64)
}

/// Per-contact latency components of the twin-assisted path, plus the
/// measured exhaustive-sweep baseline to improve upon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBudget {
    /// Table transfer to the vehicle, ms.
    pub downlink_ms: f64,
    /// Twin + K selection solve time, ms.
    pub solve_ms: f64,
    /// Over-the-air sweep cost of the K shortlisted beams.
    pub sweep: CommCostModel,
    /// Full 34-beam sweep baseline, ms.
    pub exhaustive_ms: f64,
}

impl Default for LatencyBudget {
    /// Reference values measured on a 34-beam 60 GHz testbed with a
    /// per-beam linear sweep cost.
    fn default() -> Self {
        LatencyBudget {
            downlink_ms: 0.1292,
            solve_ms: 0.023,
            sweep: CommCostModel::linear(),
            exhaustive_ms: 1.27,
        }
    }
}

impl LatencyBudget {
    pub fn validate(&self) -> Result<(), MetricsError> {
        for v in [self.downlink_ms, self.solve_ms] {
            if !v.is_finite() || v < 0.0 {
                return Err(MetricsError::InvalidThreshold(v));
            }
        }
        if !self.exhaustive_ms.is_finite() || self.exhaustive_ms <= 0.0 {
            return Err(MetricsError::NonPositiveBaseline(self.exhaustive_ms));
        }
        Ok(())
    }
}

/// End-to-end latency of one twin-assisted beam selection: table downlink,
/// optimization solve, and the K-beam sweep.
pub fn multiverse_latency(budget: &LatencyBudget, k: usize) -> Result<f64, MetricsError> {
    let sweep_ms = comm_cost(&budget.sweep, k).map_err(from_selector)?;
    Ok(budget.downlink_ms + budget.solve_ms + sweep_ms)
}

/// Percent of the exhaustive-sweep time saved: `100·(1 − latency/baseline)`.
pub fn improvement_vs_exhaustive(latency_ms: f64, exhaustive_ms: f64) -> Result<f64, MetricsError> {
    if !(exhaustive_ms > 0.0) {
        return Err(MetricsError::NonPositiveBaseline(exhaustive_ms));
    }
    Ok(100.0 * (1.0 - latency_ms / exhaustive_ms))
}

/// Inclusion probability per road region for one twin at a fixed K, in
/// spatial order — one row per region, ready for heatmap plotting.
pub fn inclusion_heatmap(
    model: &InclusionModel,
    twin_id: u32,
    scenario_id: &str,
    k: usize,
) -> Result<Vec<(usize, f64)>, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK(k));
    }
    let bins = model.twin_bins(twin_id, scenario_id).ok_or(MetricsError::UnknownTwin {
        twin_id,
        scenario_id: scenario_id.to_string(),
    })?;
    bins.regions
        .iter()
        .enumerate()
        .map(|(region, bin)| {
            let p = bin.probs.get(k - 1).copied().ok_or(MetricsError::InvalidK(k))?;
            Ok((region, p))
        })
        .collect()
}

/// Accuracy grid Ks reported by default.
pub const DEFAULT_ACCURACY_KS: [usize; 3] = [1, 5, 10];
/// Accuracy grid dB thresholds reported by default.
pub const DEFAULT_THRESHOLDS_DB: [f64; 3] = [0.0, 1.0, 2.0];

/// One cell of the accuracy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub k: usize,
    pub t_db: f64,
    pub accuracy: f64,
}

/// One row of the latency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub k: usize,
    pub latency_ms: f64,
    pub improvement_pct: f64,
}

/// JSON-ready evaluation summary: the accuracy grid, the latency table,
/// and the baseline both are judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: Vec<AccuracyCell>,
    pub latency: Vec<LatencyRow>,
    pub exhaustive_ms: f64,
}

/// Evaluate predictions on every (K, T) cell and latency at every listed K.
pub fn evaluation_report(
    gt: &GroundTruthSet,
    predicted: &[Vec<f64>],
    budget: &LatencyBudget,
    ks: &[usize],
    thresholds_db: &[f64],
    latency_ks: &[usize],
) -> Result<EvaluationReport, MetricsError> {
    budget.validate()?;
    let mut accuracy = Vec::with_capacity(ks.len() * thresholds_db.len());
    for &k in ks {
        for &t_db in thresholds_db {
            let q = AccuracyQuery::new(k, t_db)?;
            accuracy.push(AccuracyCell { k, t_db, accuracy: acc_kt(gt, predicted, &q)? });
        }
    }
    let mut latency = Vec::with_capacity(latency_ks.len());
    for &k in latency_ks {
        let latency_ms = multiverse_latency(budget, k)?;
        latency.push(LatencyRow {
            k,
            latency_ms,
            improvement_pct: improvement_vs_exhaustive(latency_ms, budget.exhaustive_ms)?,
        });
    }
    Ok(EvaluationReport { accuracy, latency, exhaustive_ms: budget.exhaustive_ms })
}
