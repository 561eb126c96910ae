//! Run configuration: one TOML file names the scene, codebook, twins,
//! measurement campaign, and selection constraints; a handful of flags
//! override single values for sweeps and experiments.

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use twinbeam_core::antenna::{load_pattern_grid, Codebook, PatternSample};
use twinbeam_core::metrics::LatencyBudget;
use twinbeam_core::raytracer::PropagationConfig;
use twinbeam_core::selector::{CommCostModel, DEFAULT_K_MAX};
use twinbeam_core::world::{make_rx_grid, RxGrid, Vec3};

use crate::{fault, Fault};

/// Sweep cost model choice, shared by config files and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommModelChoice {
    /// 5G NR synchronization-signal bursts (32 beams per burst).
    Nr5g,
    /// One fixed time slot per swept beam.
    Linear,
}

impl CommModelChoice {
    pub fn model(self) -> CommCostModel {
        match self {
            CommModelChoice::Nr5g => CommCostModel::nr5g(),
            CommModelChoice::Linear => CommCostModel::linear(),
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random draw in a run derives from it.
    pub seed: u64,
    /// Directory all artifacts are written to.
    pub out_dir: PathBuf,
    /// Scene the scenario lives in (and ground truth is traced on).
    pub scene: PathBuf,
    /// Scenario the twins compete for; defaults to the scene's map id.
    #[serde(default)]
    pub scenario: Option<String>,
    pub codebook: CodebookSpec,
    #[serde(default)]
    pub ground_truth: GroundTruthSpec,
    pub twins: Vec<TwinSpec>,
    /// Propagation capability; twins clamp reflections to their own depth.
    #[serde(default)]
    pub propagation: PropagationConfig,
    pub selection: SelectionSpec,
    #[serde(default)]
    pub pipeline: PipelineSpec,
    /// Measured latency components for dispatch records and reports.
    #[serde(default)]
    pub latency: Option<LatencyBudget>,
}

/// One twin: a world (the main scene unless overridden), a trace depth,
/// and the receiver trajectory to tabulate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinSpec {
    pub id: u32,
    /// Reflection depth this twin is traced at.
    pub rho: u32,
    /// World override, e.g. an obstacle-free baseline for the same scenario.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    pub grid: GridSpec,
}

/// Straight receiver trajectory on the road plane.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub points: usize,
    /// Receiver height above the road plane, meters.
    pub height: f64,
}

impl GridSpec {
    pub fn build(&self, scenario_id: &str) -> Result<RxGrid> {
        make_rx_grid(
            Vec3::new(self.start[0], self.start[1], 0.0),
            Vec3::new(self.end[0], self.end[1], 0.0),
            self.points,
            self.height,
            scenario_id,
        )
        .context(Fault::Config)
    }

    pub fn line_length(&self) -> f64 {
        let dx = self.end[0] - self.start[0];
        let dy = self.end[1] - self.start[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Transmit codebook source: a manifest of measured patterns or a
/// synthesized sector codebook. Exactly one must be given.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookSpec {
    /// Manifest listing per-beam pattern CSVs.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Synthetic sector codebook parameters.
    #[serde(default)]
    pub synthetic: Option<SyntheticCodebook>,
}

/// Deterministic sector codebook: Gaussian main lobes steered uniformly
/// across an azimuth span, mildly tapered in elevation, over a fixed
/// -90..90 x -40..40 degree grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCodebook {
    pub beams: usize,
    pub az_step_deg: f64,
    pub el_step_deg: f64,
    /// Steering directions cover this span, centered on boresight.
    pub az_span_deg: f64,
    /// Main-lobe standard deviation in azimuth, degrees.
    pub beam_width_deg: f64,
    /// Boresight gain, dB over the isotropic reference.
    pub peak_gain_db: f64,
}

impl Default for SyntheticCodebook {
    fn default() -> Self {
        SyntheticCodebook {
            beams: 34,
            az_step_deg: 2.0,
            el_step_deg: 4.0,
            az_span_deg: 120.0,
            beam_width_deg: 7.0,
            peak_gain_db: 12.0,
        }
    }
}

impl SyntheticCodebook {
    pub fn build(&self) -> Result<Codebook> {
        if self.beams == 0 {
            return Err(fault(Fault::Config, "synthetic codebook needs at least one beam"));
        }
        let peak = 10f64.powf(self.peak_gain_db / 20.0);
        // A strictly positive floor keeps every cell normalizable.
        let floor = peak * 1e-3;
        let n_az = (90.0 / self.az_step_deg).floor() as i64;
        let n_el = (40.0 / self.el_step_deg).floor() as i64;
        let mut beams = Vec::with_capacity(self.beams);
        for b in 0..self.beams {
            let steer = if self.beams == 1 {
                0.0
            } else {
                -self.az_span_deg / 2.0
                    + self.az_span_deg * b as f64 / (self.beams as f64 - 1.0)
            };
            let mut samples = Vec::new();
            for ei in -n_el..=n_el {
                let el = ei as f64 * self.el_step_deg;
                for ai in -n_az..=n_az {
                    let az = ai as f64 * self.az_step_deg;
                    let lobe = (-0.5 * ((az - steer) / self.beam_width_deg).powi(2)
                        - 0.5 * (el / (4.0 * self.beam_width_deg)).powi(2))
                    .exp();
                    samples.push(PatternSample {
                        az_deg: az,
                        el_deg: el,
                        amplitude: floor + (peak - floor) * lobe,
                        phase_rad: 0.0,
                    });
                }
            }
            let pattern = load_pattern_grid(&samples, self.az_step_deg, self.el_step_deg)
                .context(Fault::Config)
                .with_context(|| format!("synthesizing codebook beam {b}"))?;
            beams.push(pattern);
        }
        Ok(Codebook { beams })
    }
}

/// Measurement campaign source: a CSV of measured sweeps, or a seeded
/// synthetic campaign traced on the main scene at full capability.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundTruthSpec {
    pub path: Option<PathBuf>,
    /// Synthesized campaign size.
    pub samples: usize,
    /// Standard deviation of per-beam measurement noise, dB.
    pub noise_db: f64,
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        GroundTruthSpec { path: None, samples: 120, noise_db: 1.0 }
    }
}

/// Constraint grid for `select` and the single operating point the other
/// commands run at (their first entries).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub comm_budgets_ms: Vec<f64>,
    pub comp_budget: f64,
    #[serde(default = "default_comm_model")]
    pub comm_model: CommModelChoice,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_region_width")]
    pub region_width_m: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_alphas() -> Vec<f64> {
    vec![0.0]
}

fn default_comm_model() -> CommModelChoice {
    CommModelChoice::Linear
}

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}

fn default_region_width() -> f64 {
    5.0
}

fn default_smoothing() -> f64 {
    0.5
}

/// Local-model training and fine-tuning knobs for `pipeline`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSpec {
    /// Leading fraction of the trajectory whose samples train the local
    /// model; the rest is unseen.
    pub train_fraction: f64,
    /// Confidence length scale of the nearest-neighbor model, meters.
    pub confidence_scale_m: f64,
    /// Fraction of unseen samples labeled from the highest-fidelity twin
    /// after dispatch.
    pub labeling_ratio: f64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec { train_fraction: 0.5, confidence_scale_m: 1.0, labeling_ratio: 0.0 }
    }
}

/// Single-value overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub comm_budget_ms: Option<f64>,
    pub comp_budget: Option<f64>,
    pub comm_model: Option<CommModelChoice>,
    pub k_max: Option<usize>,
}

/// A validated configuration plus the directory its input paths resolve
/// against (the config file's own directory). The output directory is
/// taken as given, relative to the working directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub cfg: RunConfig,
    /// The config path exactly as passed on the command line.
    pub config_path: PathBuf,
    base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .context(Fault::Config)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .context(Fault::Config)
            .with_context(|| format!("parsing config {}", path.display()))?;

        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.out_dir = out.clone();
        }
        if let Some(alpha) = overrides.alpha {
            cfg.selection.alphas = vec![alpha];
        }
        if let Some(budget) = overrides.comm_budget_ms {
            cfg.selection.comm_budgets_ms = vec![budget];
        }
        if let Some(comp) = overrides.comp_budget {
            cfg.selection.comp_budget = comp;
        }
        if let Some(model) = overrides.comm_model {
            cfg.selection.comm_model = model;
        }
        if let Some(k_max) = overrides.k_max {
            cfg.selection.k_max = k_max;
        }

        let loaded = LoadedConfig {
            cfg,
            config_path: path.to_path_buf(),
            base: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<()> {
        let cfg = &self.cfg;
        let invalid = |msg: String| Err(fault(Fault::Config, msg));
        if cfg.twins.is_empty() {
            return invalid("config declares no twins".into());
        }
        for (i, a) in cfg.twins.iter().enumerate() {
            if cfg.twins[..i].iter().any(|b| b.id == a.id) {
                return invalid(format!("duplicate twin id {}", a.id));
            }
            if a.grid.points == 0 {
                return invalid(format!("twin {} grid has no points", a.id));
            }
            if a.rho > cfg.propagation.max_reflections {
                return invalid(format!(
                    "twin {} depth {} exceeds the propagation capability {}",
                    a.id, a.rho, cfg.propagation.max_reflections
                ));
            }
        }
        match (&cfg.codebook.manifest, &cfg.codebook.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                return invalid("codebook needs exactly one of `manifest` or `synthetic`".into());
            }
            _ => {}
        }
        let sel = &cfg.selection;
        if sel.alphas.is_empty() || sel.comm_budgets_ms.is_empty() {
            return invalid("selection sweeps must be non-empty".into());
        }
        if sel.alphas.iter().any(|a| !(*a >= 0.0)) {
            return invalid("alphas must be non-negative and finite".into());
        }
        if sel.comm_budgets_ms.iter().any(|b| !(*b > 0.0)) || !(sel.comp_budget > 0.0) {
            return invalid("budgets must be positive and finite".into());
        }
        if sel.k_max < 1 {
            return invalid("k_max must be at least 1".into());
        }
        if !(sel.region_width_m > 0.0) {
            return invalid("region width must be positive".into());
        }
        if !(sel.smoothing >= 0.0) {
            return invalid("smoothing must be non-negative".into());
        }
        let pipe = &cfg.pipeline;
        if !(0.0..=1.0).contains(&pipe.train_fraction) {
            return invalid("train_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&pipe.labeling_ratio) {
            return invalid("labeling_ratio must lie in [0, 1]".into());
        }
        if !(pipe.confidence_scale_m > 0.0) {
            return invalid("confidence_scale_m must be positive".into());
        }
        let gt = &cfg.ground_truth;
        if gt.path.is_none() && gt.samples == 0 {
            return invalid("synthetic campaign needs at least one sample".into());
        }
        if !(gt.noise_db >= 0.0) {
            return invalid("noise_db must be non-negative".into());
        }
        if let Some(budget) = &cfg.latency {
            budget.validate().context(Fault::Config).context("latency budget")?;
        }
        Ok(())
    }

    /// Resolve an input path from the config against the config directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    /// Twin whose trajectory spans the longest line; region offsets project
    /// onto it. Config validation guarantees at least one twin.
    pub fn axis_twin(&self) -> &TwinSpec {
        self.cfg
            .twins
            .iter()
            .max_by(|a, b| a.grid.line_length().total_cmp(&b.grid.line_length()))
            .expect("validated config has twins")
    }
}
