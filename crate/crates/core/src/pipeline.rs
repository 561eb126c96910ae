//! End-to-end beam dispatch: decide locally when the scenario is familiar,
//! fall back to the twin library when it is not.
//!
//! Each sensor sample is first screened by an out-of-distribution detector.
//! In-distribution samples take the local predictor's best beam with no
//! over-the-air cost. Out-of-distribution samples trigger twin + top-K
//! selection and a real-world sweep restricted to the shortlist. Twin
//! labels can also fine-tune the local predictor between contacts.

use crate::selector::{
    select_twin_and_k, top_k_beams, CommCostModel, InclusionModel, SelectionConstraints,
    SelectionDecision, SelectorError,
};
use crate::twin::TwinTable;
use crate::world::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty SNR vector")]
    EmptyVector,
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("beam index {index} out of range for {len} beams")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("detector has not been fitted")]
    UnfittedDetector,
    #[error("no twin built for scenario {scenario_id}")]
    TwinNotBuilt { scenario_id: String },
    #[error("lookup table has no entries")]
    EmptyLookup,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ground-truth parse: {0}")]
    Parse(String),
}

/// One vehicle observation: where it was and what its sensors saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub sample_index: u32,
    pub scenario_id: String,
    pub position: Vec3,
    /// Opaque extra sensor channels; unused by the shipped predictor.
    #[serde(default)]
    pub features: Option<Vec<f64>>,
}

/// Measured per-beam SNR for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub sample_id: u32,
    pub scenario_id: String,
    pub position: Vec3,
    pub snr_db: Vec<f64>,
}

/// A measurement campaign: the per-beam truth dispatch is judged against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruthSet {
    pub records: Vec<GroundTruthRecord>,
}

/// The beam a full sweep would pick: argmax SNR, lowest index on ties.
pub fn exhaustive_sweep(snr_db: &[f64]) -> Result<usize, PipelineError> {
    if snr_db.is_empty() {
        return Err(PipelineError::EmptyVector);
    }
    let mut best = 0usize;
    for (m, &snr) in snr_db.iter().enumerate().skip(1) {
        if snr > snr_db[best] {
            best = m;
        }
    }
    Ok(best)
}

/// The beam a sweep restricted to `candidates` would pick: argmax over the
/// candidate set, lowest beam index on ties.
pub fn sweep_candidates(snr_db: &[f64], candidates: &[usize]) -> Result<usize, PipelineError> {
    if snr_db.is_empty() {
        return Err(PipelineError::EmptyVector);
    }
    if candidates.is_empty() {
        return Err(PipelineError::EmptyCandidates);
    }
    let mut best: Option<usize> = None;
    for &m in candidates {
        if m >= snr_db.len() {
            return Err(PipelineError::IndexOutOfRange { index: m, len: snr_db.len() });
        }
        let better = match best {
            None => true,
            Some(b) => snr_db[m] > snr_db[b] || (snr_db[m] == snr_db[b] && m < b),
        };
        if better {
            best = Some(m);
        }
    }
    Ok(best.expect("candidates verified non-empty"))
}

/// The local decision engine: scores beams from sensor data alone.
pub trait LocalPredictor {
    /// Per-beam scores; the best local beam is the argmax.
    fn predict(&self, sample: &SensorSample) -> Vec<f64>;
    /// Self-assessed reliability of `predict` for this sample, in [0, 1].
    fn confidence(&self, sample: &SensorSample) -> f64;
    /// Learn one labeled example.
    fn ingest(&mut self, sample: &SensorSample, best_beam: usize);
    /// Codebook size the scores cover.
    fn n_beams(&self) -> usize;
}

/// Coordinate nearest-neighbor baseline: predicts the stored label of the
/// closest ingested position as a one-hot score vector, with confidence
/// decaying exponentially in that distance.
#[derive(Debug, Clone)]
pub struct NearestNeighborPredictor {
    entries: Vec<(Vec3, usize)>,
    n_beams: usize,
    /// Distance at which confidence falls to 1/e, meters.
    pub confidence_scale_m: f64,
}

impl NearestNeighborPredictor {
    pub fn new(n_beams: usize) -> Self {
        NearestNeighborPredictor { entries: Vec::new(), n_beams, confidence_scale_m: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nearest stored example; ties keep the earliest ingested.
    fn nearest(&self, p: Vec3) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for &(q, label) in &self.entries {
            let d = q.distance(p);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, label));
            }
        }
        best
    }
}

impl LocalPredictor for NearestNeighborPredictor {
    fn predict(&self, sample: &SensorSample) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_beams];
        if let Some((_, label)) = self.nearest(sample.position) {
            if label < self.n_beams {
                scores[label] = 1.0;
            }
        }
        scores
    }

    fn confidence(&self, sample: &SensorSample) -> f64 {
        match self.nearest(sample.position) {
            Some((d, _)) => (-d / self.confidence_scale_m).exp(),
            None => 0.0,
        }
    }

    fn ingest(&mut self, sample: &SensorSample, best_beam: usize) {
        self.entries.push((sample.position, best_beam));
    }

    fn n_beams(&self) -> usize {
        self.n_beams
    }
}

/// Verdict of the out-of-distribution screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    InDistribution,
    OutOfDistribution,
}

/// Screens samples before the local predictor is trusted.
pub trait OodDetector {
    fn classify(
        &self,
        sample: &SensorSample,
        predictor: &dyn LocalPredictor,
    ) -> Result<Distribution, PipelineError>;
}

/// Confidence floors per predicted beam: a sample is out-of-distribution
/// when the predictor's confidence falls below the floor for the beam it
/// predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct OodThresholds {
    /// Per-predicted-beam floor: lowest training confidence scaled by how
    /// often that prediction was right.
    pub per_class: BTreeMap<usize, f64>,
    /// Floor for beams never predicted during fitting.
    pub fallback: f64,
}

/// Classify one sample against fitted thresholds: out-of-distribution iff
/// confidence is strictly below the floor for the predicted beam.
pub fn baseline_ood_classify(
    sample: &SensorSample,
    predictor: &dyn LocalPredictor,
    thresholds: &OodThresholds,
) -> Result<Distribution, PipelineError> {
    let scores = predictor.predict(sample);
    let predicted = exhaustive_sweep(&scores)?;
    let floor = thresholds.per_class.get(&predicted).copied().unwrap_or(thresholds.fallback);
    if predictor.confidence(sample) < floor {
        Ok(Distribution::OutOfDistribution)
    } else {
        Ok(Distribution::InDistribution)
    }
}

/// [`OodDetector`] that learns its thresholds from labeled training data:
/// for each predicted beam, the lowest confidence seen in training times
/// the fraction of those predictions that were correct.
#[derive(Debug, Clone, Default)]
pub struct StatisticalOodDetector {
    thresholds: Option<OodThresholds>,
}

impl StatisticalOodDetector {
    pub fn new() -> Self {
        StatisticalOodDetector::default()
    }

    pub fn with_thresholds(thresholds: OodThresholds) -> Self {
        StatisticalOodDetector { thresholds: Some(thresholds) }
    }

    /// Record confidence and correctness statistics over training pairs.
    pub fn fit(
        &mut self,
        predictor: &dyn LocalPredictor,
        training: &[(SensorSample, usize)],
    ) -> Result<(), PipelineError> {
        if training.is_empty() {
            return Err(PipelineError::InvalidInput("cannot fit on empty training data".into()));
        }
        struct ClassStats {
            min_conf: f64,
            total: usize,
            correct: usize,
        }
        let mut per_class: BTreeMap<usize, ClassStats> = BTreeMap::new();
        let mut global = ClassStats { min_conf: f64::INFINITY, total: 0, correct: 0 };
        for (sample, label) in training {
            let predicted = exhaustive_sweep(&predictor.predict(sample))?;
            let conf = predictor.confidence(sample);
            let hit = predicted == *label;
            let stats = per_class
                .entry(predicted)
                .or_insert(ClassStats { min_conf: f64::INFINITY, total: 0, correct: 0 });
            stats.min_conf = stats.min_conf.min(conf);
            stats.total += 1;
            stats.correct += hit as usize;
            global.min_conf = global.min_conf.min(conf);
            global.total += 1;
            global.correct += hit as usize;
        }
        let floor = |s: &ClassStats| s.min_conf * (s.correct as f64 / s.total as f64);
        self.thresholds = Some(OodThresholds {
            per_class: per_class.iter().map(|(&c, s)| (c, floor(s))).collect(),
            fallback: floor(&global),
        });
        Ok(())
    }

    pub fn thresholds(&self) -> Option<&OodThresholds> {
        self.thresholds.as_ref()
    }
}

impl OodDetector for StatisticalOodDetector {
    fn classify(
        &self,
        sample: &SensorSample,
        predictor: &dyn LocalPredictor,
    ) -> Result<Distribution, PipelineError> {
        let thresholds = self.thresholds.as_ref().ok_or(PipelineError::UnfittedDetector)?;
        baseline_ood_classify(sample, predictor, thresholds)
    }
}

/// Which engine produced a dispatched beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Local,
    Multiverse,
}

/// Result of dispatching one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchOutcome {
    pub beam: usize,
    pub route: Route,
    /// Present exactly when the route is [`Route::Multiverse`].
    pub decision: Option<SelectionDecision>,
}

/// Dispatch one sample: trust the local predictor in distribution, or
/// select a twin and sweep its top-K shortlist against the measured SNRs
/// out of distribution. The selection region comes from the sample's
/// position projected onto the scenario's longest twin trajectory.
pub fn dispatch(
    sample: &SensorSample,
    predictor: &dyn LocalPredictor,
    detector: &dyn OodDetector,
    multiverse: &[TwinTable],
    model: &InclusionModel,
    cfg: &SelectionConstraints,
    comm: &CommCostModel,
    gt_vector: &[f64],
) -> Result<DispatchOutcome, PipelineError> {
    match detector.classify(sample, predictor)? {
        Distribution::InDistribution => {
            let beam = exhaustive_sweep(&predictor.predict(sample))?;
            Ok(DispatchOutcome { beam, route: Route::Local, decision: None })
        }
        Distribution::OutOfDistribution => {
            let scenario: Vec<&TwinTable> = multiverse
                .iter()
                .filter(|t| t.table.scenario_id == sample.scenario_id)
                .collect();
            let Some(axis) = scenario
                .iter()
                .max_by(|a, b| a.grid.length().total_cmp(&b.grid.length()))
            else {
                return Err(PipelineError::TwinNotBuilt {
                    scenario_id: sample.scenario_id.clone(),
                });
            };
            let local_cfg = SelectionConstraints {
                region_m: axis.grid.offset_along(sample.position),
                scenario_id: sample.scenario_id.clone(),
                ..cfg.clone()
            };
            let owned: Vec<TwinTable> = scenario.into_iter().cloned().collect();
            let decision = select_twin_and_k(&owned, model, &local_cfg, comm)?;
            let beam = sweep_candidates(gt_vector, &decision.beams)?;
            Ok(DispatchOutcome { beam, route: Route::Multiverse, decision: Some(decision) })
        }
    }
}

/// Label a seeded random fraction of `samples` with the twin's best beam
/// at the nearest grid entry and ingest them into the predictor. Returns
/// how many samples were labeled.
pub fn fine_tune<P: LocalPredictor + ?Sized>(
    predictor: &mut P,
    twin: &TwinTable,
    samples: &[SensorSample],
    labeling_ratio: f64,
    seed: u64,
) -> Result<usize, PipelineError> {
    if !(0.0..=1.0).contains(&labeling_ratio) {
        return Err(PipelineError::InvalidInput(format!(
            "labeling ratio must be in [0, 1], got {labeling_ratio}"
        )));
    }
    if twin.table.entries.is_empty() {
        return Err(PipelineError::EmptyLookup);
    }
    if samples.is_empty() {
        return Ok(0);
    }
    let n_pick = (labeling_ratio * samples.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, samples.len(), n_pick).into_vec();
    picked.sort_unstable();
    for idx in picked {
        let sample = &samples[idx];
        let entry = twin.entry_at(sample.position).ok_or(PipelineError::EmptyLookup)?;
        let label = top_k_beams(entry, 1)?[0];
        predictor.ingest(sample, label);
    }
    Ok(n_pick)
}

/// One line of the dispatch trace (JSON lines output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub sample_id: u32,
    pub scenario_id: String,
    pub route: Route,
    pub beam: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twin_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    pub ground_truth_best: usize,
}

/// Read a FLASH-schema ground-truth CSV:
/// `sample_id,scenario_id,pos_x,pos_y,pos_z,snr_0,...`.
pub fn load_ground_truth_csv(path: &Path) -> Result<GroundTruthSet, PipelineError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| PipelineError::Parse(e.to_string()))?;
    let headers = reader.headers().map_err(|e| PipelineError::Parse(e.to_string()))?.clone();
    let fixed = ["sample_id", "scenario_id", "pos_x", "pos_y", "pos_z"];
    if headers.len() < fixed.len() + 1 {
        return Err(PipelineError::Parse(format!(
            "expected at least {} columns, found {}",
            fixed.len() + 1,
            headers.len()
        )));
    }
    for (i, name) in fixed.iter().enumerate() {
        if &headers[i] != *name {
            return Err(PipelineError::Parse(format!(
                "column {i} must be {name}, found {}",
                &headers[i]
            )));
        }
    }
    for (m, header) in headers.iter().skip(fixed.len()).enumerate() {
        if header != format!("snr_{m}") {
            return Err(PipelineError::Parse(format!(
                "column {} must be snr_{m}, found {header}",
                fixed.len() + m
            )));
        }
    }
    let n_beams = headers.len() - fixed.len();

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| PipelineError::Parse(e.to_string()))?;
        if row.len() != headers.len() {
            return Err(PipelineError::Parse(format!(
                "row {} has {} fields, expected {}",
                records.len() + 1,
                row.len(),
                headers.len()
            )));
        }
        let field = |i: usize| -> &str { row.get(i).unwrap_or_default() };
        let num = |i: usize| -> Result<f64, PipelineError> {
            field(i)
                .trim()
                .parse()
                .map_err(|_| PipelineError::Parse(format!("bad number {:?}", field(i))))
        };
        let mut snr_db = Vec::with_capacity(n_beams);
        for m in 0..n_beams {
            snr_db.push(num(fixed.len() + m)?);
        }
        records.push(GroundTruthRecord {
            sample_id: field(0)
                .trim()
                .parse()
                .map_err(|_| PipelineError::Parse(format!("bad sample id {:?}", field(0))))?,
            scenario_id: field(1).to_string(),
            position: Vec3::new(num(2)?, num(3)?, num(4)?),
            snr_db,
        });
    }
    Ok(GroundTruthSet { records })
}

/// Write ground truth back out in the same FLASH-compatible schema.
pub fn write_ground_truth_csv(gt: &GroundTruthSet, path: &Path) -> Result<(), PipelineError> {
    let n_beams = gt.records.first().map_or(0, |r| r.snr_db.len());
    let mut out = String::from("sample_id,scenario_id,pos_x,pos_y,pos_z");
    for m in 0..n_beams {
        out.push_str(&format!(",snr_{m}"));
    }
    out.push('\n');
    for r in &gt.records {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.sample_id, r.scenario_id, r.position.x, r.position.y, r.position.z
        ));
        for &snr in &r.snr_db {
            out.push_str(&format!(",{snr}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
