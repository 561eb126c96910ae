//! The five subcommands — trace, select, pipeline, evaluate, and
//! antenna-compare — plus the campaign synthesis and artifact loading they
//! share. Every command hashes its inputs into a manifest and keeps its
//! outputs byte-identical across reruns and worker counts.

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use twinbeam_core::antenna::{
    load_codebook_manifest, mean_codebook_discrepancy, pattern_discrepancy, AntennaPattern,
    Codebook, CodebookManifest,
};
use twinbeam_core::metrics::{
    evaluation_report, inclusion_heatmap, multiverse_latency, EvaluationReport,
    DEFAULT_ACCURACY_KS, DEFAULT_THRESHOLDS_DB,
};
use twinbeam_core::pipeline::{
    dispatch, exhaustive_sweep, fine_tune, load_ground_truth_csv, write_ground_truth_csv,
    DispatchRecord, GroundTruthRecord, GroundTruthSet, LocalPredictor, NearestNeighborPredictor,
    PipelineError, Route, SensorSample, StatisticalOodDetector,
};
use twinbeam_core::raytracer::{received_power, trace_paths_beams, Scene};
use twinbeam_core::selector::{
    fit_inclusion_model, select_twin_and_k, usage_breakdown, SelectionConstraints,
    SelectionDecision, SelectorError,
};
use twinbeam_core::twin::{
    generate_lookup_table, load_lookup_table, save_lookup_table, TwinConfig, TwinError, TwinTable,
};
use twinbeam_core::world::{build_world, Vec3, WorldModel};

use crate::config::LoadedConfig;
use crate::manifest::{
    log_line, write_json, write_jsonl, CommandManifest, InputSet, TraceManifest, TwinBuildRecord,
};
use crate::{classify, fault, CompareArgs, Fault, RunArgs};

/// Read, hash, and build a scene referenced by the config.
fn load_world(loaded: &LoadedConfig, rel: &Path, inputs: &mut InputSet) -> Result<WorldModel> {
    let path = loaded.resolve(rel);
    inputs.add(&path)?;
    let text = fs::read_to_string(&path)
        .context(Fault::Config)
        .with_context(|| format!("reading scene {}", path.display()))?;
    build_world(&text)
        .map_err(|e| classify(Fault::Config, e))
        .with_context(|| format!("scene {}", path.display()))
}

/// The scenario the run is about: configured explicitly, or named after
/// the main scene's map.
fn scenario_id(loaded: &LoadedConfig, world: &WorldModel) -> String {
    loaded.cfg.scenario.clone().unwrap_or_else(|| world.map_id.clone())
}

/// Load the transmit codebook from the configured source, hashing any
/// files it came from.
fn load_codebook(loaded: &LoadedConfig, inputs: &mut InputSet) -> Result<Codebook> {
    if let Some(rel) = &loaded.cfg.codebook.manifest {
        let path = loaded.resolve(rel);
        load_manifest_codebook(&path, inputs)
    } else if let Some(synth) = &loaded.cfg.codebook.synthetic {
        synth.build()
    } else {
        unreachable!("config validation enforces exactly one codebook source")
    }
}

/// Load a codebook manifest plus the per-beam pattern files it lists.
fn load_manifest_codebook(path: &Path, inputs: &mut InputSet) -> Result<Codebook> {
    inputs.add(path)?;
    let text = fs::read_to_string(path)
        .context(Fault::Config)
        .with_context(|| format!("reading codebook manifest {}", path.display()))?;
    let manifest: CodebookManifest = toml::from_str(&text)
        .context(Fault::Config)
        .with_context(|| format!("parsing codebook manifest {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for rel in &manifest.beams {
        inputs.add(&base.join(rel))?;
    }
    load_codebook_manifest(path)
        .map_err(|e| classify(Fault::Config, e))
        .with_context(|| format!("codebook manifest {}", path.display()))
}

/// Reload the lookup tables `trace` wrote and pair each with the grid its
/// config describes. Absent or stale tables are build failures, not config
/// errors.
fn load_twin_tables(
    loaded: &LoadedConfig,
    scenario: &str,
    inputs: &mut InputSet,
) -> Result<Vec<TwinTable>> {
    let out_dir = loaded.out_dir();
    let mut tables = Vec::with_capacity(loaded.cfg.twins.len());
    for spec in &loaded.cfg.twins {
        let path = out_dir.join(format!("twin_{}.lt", spec.id));
        let table = load_lookup_table(&path)
            .map_err(|e| classify(Fault::Artifact, e))
            .with_context(|| {
                format!("lookup table {} (run `twinbeam trace` first)", path.display())
            })?;
        inputs.add(&path)?;
        let grid = spec.grid.build(scenario)?;
        if table.twin_id != spec.id
            || table.scenario_id != scenario
            || table.entries.len() != grid.points.len()
        {
            return Err(fault(
                Fault::Artifact,
                format!(
                    "lookup table {} does not match configured twin {} (stale trace?)",
                    path.display(),
                    spec.id
                ),
            ));
        }
        tables.push(TwinTable { table, grid });
    }
    let n_beams = tables[0].table.n_beams;
    if tables.iter().any(|t| t.table.n_beams != n_beams) {
        return Err(fault(Fault::Artifact, "lookup tables disagree on codebook size"));
    }
    Ok(tables)
}

/// The measurement campaign the commands judge decisions against.
struct Campaign {
    gt: GroundTruthSet,
    /// Name of the CSV written when the campaign was synthesized.
    output: Option<String>,
}

/// Load the configured campaign CSV, or synthesize and persist one.
fn obtain_ground_truth(
    loaded: &LoadedConfig,
    world: &WorldModel,
    scenario: &str,
    inputs: &mut InputSet,
    out_dir: &Path,
) -> Result<Campaign> {
    let spec = &loaded.cfg.ground_truth;
    if let Some(rel) = &spec.path {
        let path = loaded.resolve(rel);
        let gt = load_ground_truth_csv(&path)
            .map_err(|e| classify(Fault::Config, e))
            .with_context(|| format!("campaign {}", path.display()))?;
        inputs.add(&path)?;
        let n_beams = gt.records.first().map_or(0, |r| r.snr_db.len());
        if n_beams == 0 {
            return Err(fault(Fault::Config, format!("campaign {} is empty", path.display())));
        }
        for r in &gt.records {
            if r.scenario_id != scenario {
                return Err(fault(
                    Fault::Config,
                    format!(
                        "campaign sample {} belongs to scenario {}, expected {}",
                        r.sample_id, r.scenario_id, scenario
                    ),
                ));
            }
            if r.snr_db.len() != n_beams {
                return Err(fault(
                    Fault::Config,
                    format!("campaign sample {} has a ragged SNR row", r.sample_id),
                ));
            }
        }
        Ok(Campaign { gt, output: None })
    } else {
        let codebook = load_codebook(loaded, inputs)?;
        let gt = synthesize_campaign(loaded, world, scenario, &codebook);
        let file = "ground_truth.csv";
        write_ground_truth_csv(&gt, &out_dir.join(file))
            .map_err(|e| classify(Fault::Artifact, e))?;
        log_line(out_dir, &format!("synthesized {} campaign samples", gt.records.len()));
        Ok(Campaign { gt, output: Some(file.to_string()) })
    }
}

/// Trace a seeded campaign at full capability: uniform positions along the
/// longest configured trajectory, Gaussian per-beam measurement noise.
fn synthesize_campaign(
    loaded: &LoadedConfig,
    world: &WorldModel,
    scenario: &str,
    codebook: &Codebook,
) -> GroundTruthSet {
    let spec = &loaded.cfg.ground_truth;
    let axis = &loaded.axis_twin().grid;
    let a = Vec3::new(axis.start[0], axis.start[1], axis.height);
    let b = Vec3::new(axis.end[0], axis.end[1], axis.height);
    let mut rng = ChaCha8Rng::seed_from_u64(loaded.cfg.seed);
    let positions: Vec<Vec3> = (0..spec.samples)
        .map(|_| {
            let t: f64 = rng.gen();
            a + (b - a) * t
        })
        .collect();

    let scene = Scene::compile(world);
    let rx_pattern = AntennaPattern::isotropic();
    let prop = &loaded.cfg.propagation;
    let rows: Vec<Vec<f64>> = positions
        .par_iter()
        .map(|&p| {
            trace_paths_beams(&scene, &codebook.beams, &rx_pattern, p, prop)
                .iter()
                .map(|paths| received_power(paths, &rx_pattern, prop).snr_db)
                .collect()
        })
        .collect();

    let records = positions
        .into_iter()
        .zip(rows)
        .enumerate()
        .map(|(i, (position, mut snr_db))| {
            for snr in &mut snr_db {
                let z: f64 = rng.sample(StandardNormal);
                *snr += spec.noise_db * z;
            }
            GroundTruthRecord {
                sample_id: i as u32,
                scenario_id: scenario.to_string(),
                position,
                snr_db,
            }
        })
        .collect();
    GroundTruthSet { records }
}

fn check_beam_count(gt: &GroundTruthSet, n_beams: usize) -> Result<()> {
    if gt.records.iter().any(|r| r.snr_db.len() != n_beams) {
        return Err(fault(
            Fault::Config,
            format!("campaign beam count does not match the {n_beams}-beam lookup tables"),
        ));
    }
    Ok(())
}

fn create_out_dir(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)
        .context(Fault::Artifact)
        .with_context(|| format!("creating output directory {}", out_dir.display()))
}

/// Latency table Ks: the default accuracy Ks plus the configured cap,
/// bounded by the codebook.
fn latency_k_grid(k_max: usize, n_beams: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = DEFAULT_ACCURACY_KS
        .iter()
        .copied()
        .chain([k_max])
        .filter(|&k| (1..=n_beams).contains(&k))
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Build every configured twin's lookup table and write it with a manifest
/// of inputs and cost breakdowns.
pub fn cmd_trace(args: &RunArgs) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config, &args.overrides())?;
    let out_dir = loaded.out_dir().to_path_buf();
    create_out_dir(&out_dir)?;
    let mut inputs = InputSet::default();
    inputs.add(&loaded.config_path)?;
    let world = load_world(&loaded, &loaded.cfg.scene, &mut inputs)?;
    let scenario = scenario_id(&loaded, &world);
    let codebook = load_codebook(&loaded, &mut inputs)?;

    let mut twins = Vec::new();
    let mut outputs = Vec::new();
    for spec in &loaded.cfg.twins {
        let twin_world = match &spec.scene {
            Some(rel) => load_world(&loaded, rel, &mut inputs)?,
            None => world.clone(),
        };
        let grid = spec.grid.build(&scenario)?;
        let n_points = grid.points.len();
        let twin_cfg = TwinConfig {
            twin_id: spec.id,
            scenario_id: scenario.clone(),
            world: &twin_world,
            codebook: &codebook,
            rho: spec.rho,
            prop: loaded.cfg.propagation.clone(),
            rx_grid: grid,
        };
        let table = generate_lookup_table(&twin_cfg)
            .map_err(|e| {
                let class = match &e {
                    TwinError::InvalidConfig(_) => Fault::Config,
                    _ => Fault::Artifact,
                };
                classify(class, e)
            })
            .with_context(|| format!("tracing twin {}", spec.id))?;
        let file = format!("twin_{}.lt", spec.id);
        let bytes = save_lookup_table(&table, &out_dir.join(&file))
            .map_err(|e| classify(Fault::Artifact, e))
            .with_context(|| format!("writing {file}"))?;
        println!(
            "twin {}: {} points x {} beams -> {} ({} bytes, {:.0} cost units)",
            spec.id, n_points, table.n_beams, file, bytes, table.comp_cost.total
        );
        log_line(&out_dir, &format!("traced twin {} into {file}", spec.id));
        twins.push(TwinBuildRecord {
            twin_id: spec.id,
            scenario_id: table.scenario_id.clone(),
            reflection_depth: spec.rho,
            n_beams: table.n_beams,
            n_points,
            file: file.clone(),
            bytes,
            map_cost: table.comp_cost.map_cost,
            lookup_cost: table.comp_cost.lookup_cost,
            total_cost: table.comp_cost.total,
            wall_clock_estimate_s: table.comp_cost.wall_clock_estimate_s,
        });
        outputs.push(file);
    }
    outputs.push("trace_manifest.json".to_string());
    let manifest = TraceManifest {
        command: "trace".into(),
        seed: loaded.cfg.seed,
        scenario_id: scenario,
        inputs: inputs.into_records(),
        twins,
        outputs,
    };
    write_json(&manifest, &out_dir.join("trace_manifest.json"))?;
    log_line(&out_dir, "trace complete");
    Ok(())
}

/// One line of `decisions.jsonl`.
#[derive(Debug, Serialize)]
struct DecisionLine {
    alpha: f64,
    comm_budget_ms: f64,
    sample_id: u32,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    twin_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beams: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inclusion_probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comm_cost_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comp_cost: Option<f64>,
}

impl DecisionLine {
    fn decided(alpha: f64, budget: f64, sample_id: u32, d: &SelectionDecision) -> DecisionLine {
        DecisionLine {
            alpha,
            comm_budget_ms: budget,
            sample_id,
            status: "decided",
            twin_id: Some(d.twin_id),
            k: Some(d.k),
            beams: Some(d.beams.clone()),
            objective: Some(d.objective),
            inclusion_probability: Some(d.inclusion_probability),
            comm_cost_ms: Some(d.comm_cost_ms),
            comp_cost: Some(d.comp_cost),
        }
    }

    fn infeasible(alpha: f64, budget: f64, sample_id: u32) -> DecisionLine {
        DecisionLine {
            alpha,
            comm_budget_ms: budget,
            sample_id,
            status: "infeasible",
            twin_id: None,
            k: None,
            beams: None,
            objective: None,
            inclusion_probability: None,
            comm_cost_ms: None,
            comp_cost: None,
        }
    }
}

/// Sweep every (alpha, communication budget) cell over the campaign,
/// logging each decision and the per-cell twin usage shares.
pub fn cmd_select(args: &RunArgs) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config, &args.overrides())?;
    let out_dir = loaded.out_dir().to_path_buf();
    create_out_dir(&out_dir)?;
    let mut inputs = InputSet::default();
    inputs.add(&loaded.config_path)?;
    let world = load_world(&loaded, &loaded.cfg.scene, &mut inputs)?;
    let scenario = scenario_id(&loaded, &world);
    let twins = load_twin_tables(&loaded, &scenario, &mut inputs)?;
    let campaign = obtain_ground_truth(&loaded, &world, &scenario, &mut inputs, &out_dir)?;
    let gt = &campaign.gt;
    check_beam_count(gt, twins[0].table.n_beams as usize)?;

    let sel = &loaded.cfg.selection;
    let model = fit_inclusion_model(gt, &twins, sel.region_width_m, sel.smoothing)
        .map_err(|e| classify(Fault::Config, e))?;
    let axis = twins
        .iter()
        .max_by(|a, b| a.grid.length().total_cmp(&b.grid.length()))
        .expect("twins are validated non-empty");
    let comm = sel.comm_model.model();

    let mut lines: Vec<DecisionLine> = Vec::new();
    let mut usage_rows: Vec<Vec<String>> = Vec::new();
    let mut decided_total = 0usize;
    let mut infeasible_total = 0usize;
    for &alpha in &sel.alphas {
        for &budget in &sel.comm_budgets_ms {
            let mut decisions: Vec<SelectionDecision> = Vec::new();
            let mut infeasible = 0usize;
            for record in &gt.records {
                let mut constraints = SelectionConstraints::new(
                    budget,
                    sel.comp_budget,
                    alpha,
                    axis.grid.offset_along(record.position),
                    &scenario,
                );
                constraints.k_max = sel.k_max;
                match select_twin_and_k(&twins, &model, &constraints, &comm) {
                    Ok(d) => {
                        lines.push(DecisionLine::decided(alpha, budget, record.sample_id, &d));
                        decisions.push(d);
                    }
                    Err(SelectorError::NoFeasibleTwin) => {
                        infeasible += 1;
                        lines.push(DecisionLine::infeasible(alpha, budget, record.sample_id));
                    }
                    Err(e) => return Err(classify(Fault::Config, e)),
                }
            }
            decided_total += decisions.len();
            infeasible_total += infeasible;
            let shares = if decisions.is_empty() {
                BTreeMap::new()
            } else {
                usage_breakdown(&decisions).map_err(|e| classify(Fault::Config, e))?
            };
            let mut row = vec![
                alpha.to_string(),
                budget.to_string(),
                gt.records.len().to_string(),
                decisions.len().to_string(),
                infeasible.to_string(),
            ];
            for spec in &loaded.cfg.twins {
                row.push(shares.get(&spec.id).copied().unwrap_or(0.0).to_string());
            }
            usage_rows.push(row);
        }
    }

    write_jsonl(&lines, &out_dir.join("decisions.jsonl"))?;
    let mut writer = csv::Writer::from_path(out_dir.join("usage.csv")).context(Fault::Artifact)?;
    let mut header =
        vec!["alpha".into(), "comm_budget_ms".into(), "samples".into(), "decided".into(), "infeasible".into()];
    for spec in &loaded.cfg.twins {
        header.push(format!("twin_{}_pct", spec.id));
    }
    writer.write_record(&header).context(Fault::Artifact)?;
    for row in &usage_rows {
        writer.write_record(row).context(Fault::Artifact)?;
    }
    writer.flush().context(Fault::Artifact)?;

    let cells = sel.alphas.len() * sel.comm_budgets_ms.len();
    let mut outputs = Vec::new();
    if let Some(file) = &campaign.output {
        outputs.push(file.clone());
    }
    outputs.extend(["decisions.jsonl".to_string(), "usage.csv".into(), "select_manifest.json".into()]);
    let mut stats = BTreeMap::new();
    stats.insert("cells".to_string(), json!(cells));
    stats.insert("samples".to_string(), json!(gt.records.len()));
    stats.insert("decided".to_string(), json!(decided_total));
    stats.insert("infeasible".to_string(), json!(infeasible_total));
    let manifest = CommandManifest {
        command: "select".into(),
        seed: Some(loaded.cfg.seed),
        scenario_id: Some(scenario.clone()),
        inputs: inputs.into_records(),
        outputs,
        stats,
    };
    write_json(&manifest, &out_dir.join("select_manifest.json"))?;
    log_line(&out_dir, "select complete");
    println!(
        "select: {} cells x {} samples -> {} decided, {} infeasible",
        cells,
        gt.records.len(),
        decided_total,
        infeasible_total
    );
    if decided_total == 0 {
        return Err(fault(
            Fault::Infeasible,
            "every (alpha, budget) cell was infeasible for every sample",
        ));
    }
    Ok(())
}

/// Fault class for a dispatch failure: missing twins are build artifacts,
/// budget exhaustion is infeasibility, the rest is configuration.
fn pipeline_fault(e: PipelineError) -> anyhow::Error {
    let class = match &e {
        PipelineError::TwinNotBuilt { .. } => Fault::Artifact,
        PipelineError::Selector(SelectorError::NoFeasibleTwin) => Fault::Infeasible,
        _ => Fault::Config,
    };
    classify(class, e)
}

/// Train the local model on the leading stretch of the campaign, dispatch
/// every sample between it and the twin service, and report accuracy and
/// latency against the exhaustive sweep.
pub fn cmd_pipeline(args: &RunArgs) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config, &args.overrides())?;
    let out_dir = loaded.out_dir().to_path_buf();
    create_out_dir(&out_dir)?;
    let mut inputs = InputSet::default();
    inputs.add(&loaded.config_path)?;
    let world = load_world(&loaded, &loaded.cfg.scene, &mut inputs)?;
    let scenario = scenario_id(&loaded, &world);
    let twins = load_twin_tables(&loaded, &scenario, &mut inputs)?;
    let campaign = obtain_ground_truth(&loaded, &world, &scenario, &mut inputs, &out_dir)?;
    let gt = &campaign.gt;
    let n_beams = twins[0].table.n_beams as usize;
    check_beam_count(gt, n_beams)?;

    let sel = &loaded.cfg.selection;
    let pipe = &loaded.cfg.pipeline;
    let model = fit_inclusion_model(gt, &twins, sel.region_width_m, sel.smoothing)
        .map_err(|e| classify(Fault::Config, e))?;
    let axis = twins
        .iter()
        .max_by(|a, b| a.grid.length().total_cmp(&b.grid.length()))
        .expect("twins are validated non-empty");
    let cut = pipe.train_fraction * axis.grid.length();

    let samples: Vec<SensorSample> = gt
        .records
        .iter()
        .map(|r| SensorSample {
            sample_index: r.sample_id,
            scenario_id: r.scenario_id.clone(),
            position: r.position,
            features: None,
        })
        .collect();

    let mut predictor = NearestNeighborPredictor::new(n_beams);
    predictor.confidence_scale_m = pipe.confidence_scale_m;
    let mut training: Vec<(SensorSample, usize)> = Vec::new();
    for (record, sample) in gt.records.iter().zip(&samples) {
        if axis.grid.offset_along(record.position) <= cut {
            let label =
                exhaustive_sweep(&record.snr_db).map_err(|e| classify(Fault::Config, e))?;
            predictor.ingest(sample, label);
            training.push((sample.clone(), label));
        }
    }
    if training.is_empty() {
        return Err(fault(
            Fault::Config,
            "train_fraction leaves no training samples; raise it or densify the campaign",
        ));
    }
    let mut detector = StatisticalOodDetector::new();
    detector.fit(&predictor, &training).map_err(|e| classify(Fault::Config, e))?;

    let comm = sel.comm_model.model();
    let mut constraints =
        SelectionConstraints::new(sel.comm_budgets_ms[0], sel.comp_budget, sel.alphas[0], 0.0, &scenario);
    constraints.k_max = sel.k_max;
    let budget = loaded.cfg.latency.clone().unwrap_or_default();

    let mut trace_lines: Vec<DispatchRecord> = Vec::new();
    let mut predicted: Vec<Vec<f64>> = Vec::new();
    let (mut local_routes, mut multiverse_routes) = (0usize, 0usize);
    for (record, sample) in gt.records.iter().zip(&samples) {
        let outcome = dispatch(
            sample,
            &predictor,
            &detector,
            &twins,
            &model,
            &constraints,
            &comm,
            &record.snr_db,
        )
        .map_err(pipeline_fault)
        .with_context(|| format!("dispatching sample {}", record.sample_id))?;
        let scores: Vec<f64> = match outcome.route {
            Route::Local => {
                local_routes += 1;
                predictor.predict(sample)
            }
            Route::Multiverse => {
                multiverse_routes += 1;
                let decision =
                    outcome.decision.as_ref().expect("multiverse outcome carries a decision");
                let twin = twins
                    .iter()
                    .find(|t| t.table.twin_id == decision.twin_id)
                    .ok_or_else(|| {
                        fault(
                            Fault::Artifact,
                            format!("decision names unknown twin {}", decision.twin_id),
                        )
                    })?;
                let entry = twin.entry_at(sample.position).ok_or_else(|| {
                    fault(Fault::Artifact, format!("twin {} has no entries", decision.twin_id))
                })?;
                entry.snr_db.iter().map(|&s| s as f64).collect()
            }
        };
        let latency_ms = match &outcome.decision {
            Some(d) => {
                Some(multiverse_latency(&budget, d.k).map_err(|e| classify(Fault::Config, e))?)
            }
            None => None,
        };
        trace_lines.push(DispatchRecord {
            sample_id: record.sample_id,
            scenario_id: record.scenario_id.clone(),
            route: outcome.route,
            beam: outcome.beam,
            twin_id: outcome.decision.as_ref().map(|d| d.twin_id),
            k: outcome.decision.as_ref().map(|d| d.k),
            latency_ms,
            ground_truth_best: exhaustive_sweep(&record.snr_db)
                .map_err(|e| classify(Fault::Config, e))?,
        });
        predicted.push(scores);
    }

    // Optionally bootstrap the local model further: label a seeded fraction
    // of the unseen stretch with the deepest twin's best beams.
    let labeled = if pipe.labeling_ratio > 0.0 {
        let teacher = twins
            .iter()
            .max_by(|a, b| {
                a.table
                    .comp_cost
                    .total
                    .total_cmp(&b.table.comp_cost.total)
                    .then(a.table.twin_id.cmp(&b.table.twin_id))
            })
            .expect("twins are validated non-empty");
        let unseen: Vec<SensorSample> = gt
            .records
            .iter()
            .zip(&samples)
            .filter(|(r, _)| axis.grid.offset_along(r.position) > cut)
            .map(|(_, s)| s.clone())
            .collect();
        fine_tune(&mut predictor, teacher, &unseen, pipe.labeling_ratio, loaded.cfg.seed)
            .map_err(|e| classify(Fault::Config, e))?
    } else {
        0
    };
    // Local model's exact top-1 agreement with the sweep after tuning.
    let mut local_hits = 0usize;
    for (record, sample) in gt.records.iter().zip(&samples) {
        let best = exhaustive_sweep(&predictor.predict(sample))
            .map_err(|e| classify(Fault::Config, e))?;
        let truth = exhaustive_sweep(&record.snr_db).map_err(|e| classify(Fault::Config, e))?;
        local_hits += (best == truth) as usize;
    }

    let ks: Vec<usize> =
        DEFAULT_ACCURACY_KS.iter().copied().filter(|&k| k <= n_beams).collect();
    let latency_ks = latency_k_grid(sel.k_max, n_beams);
    let report = evaluation_report(gt, &predicted, &budget, &ks, &DEFAULT_THRESHOLDS_DB, &latency_ks)
        .map_err(|e| classify(Fault::Config, e))?;

    write_jsonl(&trace_lines, &out_dir.join("dispatch_trace.jsonl"))?;
    write_json(&report, &out_dir.join("report.json"))?;
    let mut outputs = Vec::new();
    if let Some(file) = &campaign.output {
        outputs.push(file.clone());
    }
    outputs.extend([
        "dispatch_trace.jsonl".to_string(),
        "report.json".into(),
        "pipeline_manifest.json".into(),
    ]);
    let mut stats = BTreeMap::new();
    stats.insert("samples".to_string(), json!(gt.records.len()));
    stats.insert("training_samples".to_string(), json!(training.len()));
    stats.insert("local_routes".to_string(), json!(local_routes));
    stats.insert("multiverse_routes".to_string(), json!(multiverse_routes));
    stats.insert("fine_tune_labels".to_string(), json!(labeled));
    stats.insert(
        "local_top1_exact".to_string(),
        json!(local_hits as f64 / gt.records.len() as f64),
    );
    let manifest = CommandManifest {
        command: "pipeline".into(),
        seed: Some(loaded.cfg.seed),
        scenario_id: Some(scenario.clone()),
        inputs: inputs.into_records(),
        outputs,
        stats,
    };
    write_json(&manifest, &out_dir.join("pipeline_manifest.json"))?;
    log_line(&out_dir, "pipeline complete");
    println!(
        "pipeline: {} samples -> {} local, {} multiverse routes; {} fine-tune labels",
        gt.records.len(),
        local_routes,
        multiverse_routes,
        labeled
    );
    Ok(())
}

/// One twin's scores in `evaluation.json`.
#[derive(Debug, Serialize)]
struct TwinEvaluation {
    twin_id: u32,
    reflection_depth: u32,
    report: EvaluationReport,
}

/// Root document of `evaluation.json`.
#[derive(Debug, Serialize)]
struct EvaluationDocument {
    scenario_id: String,
    samples: usize,
    twins: Vec<TwinEvaluation>,
}

/// Score every twin's table against the campaign and export the accuracy
/// grid, latency table, and inclusion heatmap.
pub fn cmd_evaluate(args: &RunArgs) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config, &args.overrides())?;
    let out_dir = loaded.out_dir().to_path_buf();
    create_out_dir(&out_dir)?;
    let mut inputs = InputSet::default();
    inputs.add(&loaded.config_path)?;
    let world = load_world(&loaded, &loaded.cfg.scene, &mut inputs)?;
    let scenario = scenario_id(&loaded, &world);
    let twins = load_twin_tables(&loaded, &scenario, &mut inputs)?;
    let campaign = obtain_ground_truth(&loaded, &world, &scenario, &mut inputs, &out_dir)?;
    let gt = &campaign.gt;
    let n_beams = twins[0].table.n_beams as usize;
    check_beam_count(gt, n_beams)?;

    let sel = &loaded.cfg.selection;
    let model = fit_inclusion_model(gt, &twins, sel.region_width_m, sel.smoothing)
        .map_err(|e| classify(Fault::Config, e))?;
    let budget = loaded.cfg.latency.clone().unwrap_or_default();
    let ks: Vec<usize> =
        DEFAULT_ACCURACY_KS.iter().copied().filter(|&k| k <= n_beams).collect();
    let latency_ks = latency_k_grid(sel.k_max, n_beams);

    let mut evaluations = Vec::new();
    for (spec, twin) in loaded.cfg.twins.iter().zip(&twins) {
        let predicted: Vec<Vec<f64>> = gt
            .records
            .iter()
            .map(|r| {
                twin.entry_at(r.position)
                    .map(|e| e.snr_db.iter().map(|&s| s as f64).collect())
                    .ok_or_else(|| {
                        fault(Fault::Artifact, format!("twin {} has no entries", spec.id))
                    })
            })
            .collect::<Result<_>>()?;
        let report =
            evaluation_report(gt, &predicted, &budget, &ks, &DEFAULT_THRESHOLDS_DB, &latency_ks)
                .map_err(|e| classify(Fault::Config, e))?;
        let top1 = report.accuracy.first().map_or(f64::NAN, |c| c.accuracy);
        println!("twin {}: top-1 exact accuracy {:.4}", spec.id, top1);
        evaluations.push(TwinEvaluation {
            twin_id: spec.id,
            reflection_depth: spec.rho,
            report,
        });
    }

    let mut writer = csv::Writer::from_path(out_dir.join("heatmap.csv")).context(Fault::Artifact)?;
    writer
        .write_record(["twin_id", "k", "region_index", "probability"])
        .context(Fault::Artifact)?;
    let k_cap = sel.k_max.min(n_beams);
    for spec in &loaded.cfg.twins {
        for k in 1..=k_cap {
            let heat = inclusion_heatmap(&model, spec.id, &scenario, k)
                .map_err(|e| classify(Fault::Config, e))?;
            for (region, p) in heat {
                writer
                    .write_record([
                        spec.id.to_string(),
                        k.to_string(),
                        region.to_string(),
                        p.to_string(),
                    ])
                    .context(Fault::Artifact)?;
            }
        }
    }
    writer.flush().context(Fault::Artifact)?;

    let document = EvaluationDocument {
        scenario_id: scenario.clone(),
        samples: gt.records.len(),
        twins: evaluations,
    };
    write_json(&document, &out_dir.join("evaluation.json"))?;
    let mut outputs = Vec::new();
    if let Some(file) = &campaign.output {
        outputs.push(file.clone());
    }
    outputs.extend([
        "evaluation.json".to_string(),
        "heatmap.csv".into(),
        "evaluate_manifest.json".into(),
    ]);
    let mut stats = BTreeMap::new();
    stats.insert("samples".to_string(), json!(gt.records.len()));
    stats.insert("twins".to_string(), json!(loaded.cfg.twins.len()));
    let manifest = CommandManifest {
        command: "evaluate".into(),
        seed: Some(loaded.cfg.seed),
        scenario_id: Some(scenario),
        inputs: inputs.into_records(),
        outputs,
        stats,
    };
    write_json(&manifest, &out_dir.join("evaluate_manifest.json"))?;
    log_line(&out_dir, "evaluate complete");
    Ok(())
}

/// Compare two codebook manifests pattern by pattern and report the mean
/// discrepancy on stdout (`mean_delta=<value>`).
pub fn cmd_antenna_compare(args: &CompareArgs) -> Result<()> {
    create_out_dir(&args.out)?;
    let mut inputs = InputSet::default();
    let book_a = load_manifest_codebook(&args.manifest_a, &mut inputs)?;
    let book_b = load_manifest_codebook(&args.manifest_b, &mut inputs)?;
    let mean = mean_codebook_discrepancy(&book_a, &book_b)
        .map_err(|e| classify(Fault::Config, e))?;

    let mut writer =
        csv::Writer::from_path(args.out.join("antenna_compare.csv")).context(Fault::Artifact)?;
    writer.write_record(["beam", "delta", "cells"]).context(Fault::Artifact)?;
    for (i, (a, b)) in book_a.beams.iter().zip(&book_b.beams).enumerate() {
        let sim = pattern_discrepancy(a, b).map_err(|e| classify(Fault::Config, e))?;
        writer
            .write_record([i.to_string(), sim.delta.to_string(), sim.per_point_count.to_string()])
            .context(Fault::Artifact)?;
    }
    writer.flush().context(Fault::Artifact)?;

    let mut stats = BTreeMap::new();
    stats.insert("beams".to_string(), json!(book_a.beams.len()));
    stats.insert("mean_delta".to_string(), json!(mean));
    let manifest = CommandManifest {
        command: "antenna-compare".into(),
        seed: None,
        scenario_id: None,
        inputs: inputs.into_records(),
        outputs: vec!["antenna_compare.csv".into(), "antenna_compare_manifest.json".into()],
        stats,
    };
    write_json(&manifest, &args.out.join("antenna_compare_manifest.json"))?;
    log_line(&args.out, "antenna-compare complete");
    println!("mean_delta={mean}");
    Ok(())
}
