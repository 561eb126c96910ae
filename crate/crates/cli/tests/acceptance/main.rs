//! Acceptance gate for the whole workspace: eleven numbered criteria, each
//! printing one `criterion NN PASS|FAIL <name>` line (run with
//! `--nocapture` to see them). Quantitative targets are checked against
//! frozen constants; algorithmic criteria re-run the independent oracles
//! shared with the core test suites; end-to-end criteria drive the real
//! binary in temporary directories.

use std::panic::{catch_unwind, resume_unwind, UnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twinbeam_core::antenna::{mean_codebook_discrepancy, pattern_discrepancy, AntennaPattern, Codebook};
use twinbeam_core::metrics::{
    acc_kt, improvement_vs_exhaustive, multiverse_latency, AccuracyQuery, LatencyBudget,
};
use twinbeam_core::pipeline::{
    dispatch, exhaustive_sweep, fine_tune, load_ground_truth_csv, write_ground_truth_csv,
    Distribution, GroundTruthRecord, GroundTruthSet, LocalPredictor, NearestNeighborPredictor,
    OodDetector, PipelineError, Route, SensorSample,
};
use twinbeam_core::raytracer::{reception_sphere_radius, PropagationConfig};
use twinbeam_core::selector::{comm_cost, fit_inclusion_model, CommCostModel, SelectionConstraints};
use twinbeam_core::twin::{prop_cost_factor, total_cost, LookupEntry, LookupTable, TwinTable};
use twinbeam_core::world::{make_rx_grid, Vec3};

#[path = "../support/fixtures.rs"]
mod fixtures;
#[path = "../../../core/tests/support/ray_enum.rs"]
mod ray_enum;
#[path = "../../../core/tests/support/brute_select.rs"]
mod brute_select;
#[path = "../../../core/tests/support/acc_enum.rs"]
mod acc_enum;

use fixtures::{artifact_bytes, assert_success, run_with_env, write_workspace, FixtureOptions};

/// Run one criterion body and print its verdict line.
fn criterion<F: FnOnce() + UnwindSafe>(number: u32, name: &str, body: F) {
    match catch_unwind(body) {
        Ok(()) => println!("criterion {number:02} PASS {name}"),
        Err(payload) => {
            println!("criterion {number:02} FAIL {name}");
            resume_unwind(payload);
        }
    }
}

#[test]
fn criterion_01_latency_reproduction() {
    criterion(1, "latency-reproduction", || {
        // The published operating point: downlink, solve, and a linear
        // per-beam sweep against a 1.27 ms exhaustive baseline.
        let budget = LatencyBudget {
            downlink_ms: 0.1292,
            solve_ms: 0.023,
            sweep: CommCostModel::linear(),
            exhaustive_ms: 1.27,
        };
        assert_eq!(budget, LatencyBudget::default(), "the default budget is the reference point");

        let single = multiverse_latency(&budget, 1).expect("k = 1 latency");
        let full = multiverse_latency(&budget, 12).expect("k = 12 latency");
        assert!((single - 0.1895).abs() < 1e-4, "k = 1 latency {single} ms");
        assert!((full - 0.6004).abs() < 1e-4, "k = 12 latency {full} ms");

        let single_gain = improvement_vs_exhaustive(single, budget.exhaustive_ms).unwrap();
        let full_gain = improvement_vs_exhaustive(full, budget.exhaustive_ms).unwrap();
        assert!((85.06..=85.09).contains(&single_gain), "k = 1 improvement {single_gain}%");
        assert!((52.71..=52.73).contains(&full_gain), "k = 12 improvement {full_gain}%");
    });
}

#[test]
fn criterion_02_burst_sweep_cost_exactness() {
    criterion(2, "nr-burst-sweep-cost-exactness", || {
        let model = CommCostModel::nr5g();
        for k in 1..=32 {
            assert_eq!(comm_cost(&model, k).unwrap(), 5.0, "one burst covers k = {k}");
        }
        for k in 33..=64 {
            assert_eq!(comm_cost(&model, k).unwrap(), 25.0, "two bursts cover k = {k}");
        }
    });
}

#[test]
fn criterion_03_propagation_cost_factor_exactness() {
    criterion(3, "propagation-cost-factor-exactness", || {
        assert_eq!(prop_cost_factor(3, 0, 1, 4).unwrap(), 64.0, "reference factor");
        // Depth 3 over depth 1 is exactly 2x at zero transmission depth,
        // independent of diffraction depth and surface count.
        for zeta in [0, 1, 2] {
            for w in [1, 2, 5, 13] {
                let deep = prop_cost_factor(3, 0, zeta, w).unwrap();
                let shallow = prop_cost_factor(1, 0, zeta, w).unwrap();
                assert_eq!(deep / shallow, 2.0, "ratio at zeta = {zeta}, w = {w}");
            }
        }
    });
}

#[test]
fn criterion_04_ray_tracer_oracles() {
    criterion(4, "ray-tracer-oracles", || {
        ray_enum::friis_los_check();
        ray_enum::canyon_enumerator_check(50, 0x04ac);
    });
}

#[test]
fn criterion_05_optimizer_equivalence() {
    criterion(5, "optimizer-equivalence", || {
        brute_select::optimizer_equivalence_check(1000, 0x05ac);
    });
}

#[test]
fn criterion_06_accuracy_metric_oracle() {
    criterion(6, "accuracy-metric-oracle", || {
        acc_enum::accuracy_oracle_check(1000, 0x06ac);
        acc_enum::accuracy_monotonicity_check(1000, 0x06ac + 1);
    });
}

#[test]
fn criterion_07_reception_sphere_radius() {
    criterion(7, "reception-sphere-radius", || {
        let cfg = PropagationConfig {
            ray_spacing_deg: 0.25,
            max_range_m: 20.0,
            ..PropagationConfig::default()
        };
        let radius = reception_sphere_radius(&cfg);
        assert!((radius - 0.0873).abs() <= 1e-4, "radius {radius} m vs 8.73 cm");
    });
}

/// Independent scalar point-on-sphere construction for criterion 8.
fn sphere_point(az_deg: f64, el_deg: f64) -> [f64; 3] {
    let (az, el) = (az_deg.to_radians(), el_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

fn random_pattern(rng: &mut ChaCha8Rng, n_az: usize, n_el: usize) -> AntennaPattern {
    AntennaPattern {
        az_min_deg: rng.gen_range(-120.0..-40.0),
        el_min_deg: rng.gen_range(-30.0..0.0),
        az_step_deg: rng.gen_range(2.0..8.0),
        el_step_deg: rng.gen_range(2.0..8.0),
        n_az,
        n_el,
        gains: (0..n_az * n_el).map(|_| (rng.gen_range(0.2..8.0), 0.0)).collect(),
        floor_amplitude: 0.0,
    }
}

#[test]
fn criterion_08_pattern_similarity_bounds() {
    criterion(8, "pattern-similarity-bounds", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x08ac);

        // 1. Identity: a pattern against itself scores exactly zero.
        let base = random_pattern(&mut rng, 7, 3);
        assert_eq!(pattern_discrepancy(&base, &base).unwrap().delta, 0.0, "identity score");

        // 2. Antipodal bound: rotating a zero-elevation grid by 180
        //    degrees points every cell exactly away from its counterpart.
        let row = AntennaPattern { n_el: 1, el_min_deg: 0.0, ..random_pattern(&mut rng, 9, 1) };
        let flipped = AntennaPattern { az_min_deg: row.az_min_deg + 180.0, ..row.clone() };
        let negated = pattern_discrepancy(&row, &flipped).unwrap();
        assert!((negated.delta - 2.0).abs() < 1e-12, "antipodal score {}", negated.delta);
        assert_eq!(negated.per_point_count, 9, "every cell enters the mean");

        // 3. Randomized pairs: bounded by [0, 2] and equal to a direct
        //    per-point enumeration within 1e-12.
        for round in 0..200 {
            let n_az = rng.gen_range(2..9);
            let n_el = rng.gen_range(1..4);
            let a = random_pattern(&mut rng, n_az, n_el);
            let b = random_pattern(&mut rng, n_az, n_el);
            let sim = pattern_discrepancy(&a, &b).unwrap();
            assert!((0.0..=2.0).contains(&sim.delta), "round {round}: delta {}", sim.delta);

            let mut expected = 0.0;
            for idx in 0..n_az * n_el {
                let (az_a, el_a) = a.cell_angles(idx % n_az, idx / n_az);
                let (az_b, el_b) = b.cell_angles(idx % n_az, idx / n_az);
                let (ua, ub) = (sphere_point(az_a, el_a), sphere_point(az_b, el_b));
                expected += ((ub[0] - ua[0]).powi(2)
                    + (ub[1] - ua[1]).powi(2)
                    + (ub[2] - ua[2]).powi(2))
                .sqrt();
            }
            expected /= (n_az * n_el) as f64;
            assert!(
                (sim.delta - expected).abs() < 1e-12,
                "round {round}: scored {} vs enumerated {expected}",
                sim.delta
            );
        }
    });
}

/// Routes every sample to the twin service.
struct AlwaysOutside;

impl OodDetector for AlwaysOutside {
    fn classify(
        &self,
        _sample: &SensorSample,
        _predictor: &dyn LocalPredictor,
    ) -> Result<Distribution, PipelineError> {
        Ok(Distribution::OutOfDistribution)
    }
}

/// A lookup table whose entries copy the ground truth exactly, paired with
/// the grid the campaign was sampled on.
fn mirror_twin(gt: &GroundTruthSet, grid: twinbeam_core::world::RxGrid, beams: u32) -> TwinTable {
    let entries = gt
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| LookupEntry {
            rx_index: i as u32,
            snr_db: r.snr_db.iter().map(|&s| s as f32).collect(),
            n_rays: vec![1; r.snr_db.len()],
        })
        .collect();
    TwinTable {
        table: LookupTable {
            twin_id: 1,
            scenario_id: grid.scenario_id.clone(),
            n_beams: beams,
            entries,
            comp_cost: total_cost(1.0, 10.0),
        },
        grid,
    }
}

#[test]
fn criterion_09_pipeline_dispatch_and_fine_tuning() {
    criterion(9, "pipeline-dispatch-and-fine-tuning", || {
        let beams = 16usize;
        let n = 24usize;
        let grid = make_rx_grid(
            Vec3::new(-6.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            n,
            1.5,
            "synthetic",
        )
        .expect("grid");
        let mut rng = ChaCha8Rng::seed_from_u64(0x09ac);

        // Quarter-dB SNRs are exact in f32, so the table mirrors the
        // campaign with no rounding slack.
        let records: Vec<GroundTruthRecord> = grid
            .points
            .iter()
            .enumerate()
            .map(|(i, &p)| GroundTruthRecord {
                sample_id: i as u32,
                scenario_id: "synthetic".into(),
                position: p,
                snr_db: (0..beams).map(|_| rng.gen_range(-200..=200) as f64 * 0.25).collect(),
            })
            .collect();
        let gt = GroundTruthSet { records };
        let twin = mirror_twin(&gt, grid.clone(), beams as u32);
        let model = fit_inclusion_model(&gt, &[twin.clone()], 3.0, 0.5).expect("inclusion fit");
        let comm = CommCostModel::linear();
        let predictor = NearestNeighborPredictor::new(beams);

        // 1. A table equal to the ground truth makes every twin-routed
        //    dispatch return the exhaustive-sweep beam, whatever K.
        for k_max in [1, 3, beams] {
            for record in &gt.records {
                let sample = SensorSample {
                    sample_index: record.sample_id,
                    scenario_id: record.scenario_id.clone(),
                    position: record.position,
                    features: None,
                };
                let mut cfg = SelectionConstraints::new(1e9, 1e9, 0.0, 0.0, "synthetic");
                cfg.k_max = k_max;
                let outcome = dispatch(
                    &sample,
                    &predictor,
                    &AlwaysOutside,
                    std::slice::from_ref(&twin),
                    &model,
                    &cfg,
                    &comm,
                    &record.snr_db,
                )
                .expect("dispatch");
                assert_eq!(outcome.route, Route::Multiverse, "detector forces the twin route");
                let best = exhaustive_sweep(&record.snr_db).expect("sweep");
                assert_eq!(
                    outcome.beam, best,
                    "sample {} at k_max {k_max} must match the sweep",
                    record.sample_id
                );
            }
        }

        // 2. With the table's top-1 correct on exactly 13 of 20 grid
        //    points, full-ratio fine-tuning pins the local model's on-grid
        //    top-1 accuracy to exactly 13/20.
        let (beams, n, correct) = (8usize, 20usize, 13usize);
        let grid = make_rx_grid(
            Vec3::new(-4.75, 0.0, 0.0),
            Vec3::new(4.75, 0.0, 0.0),
            n,
            1.5,
            "synthetic",
        )
        .expect("grid");
        let records: Vec<GroundTruthRecord> = grid
            .points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let best = rng.gen_range(0..beams);
                let mut snr = vec![0.0; beams];
                snr[best] = 10.0;
                GroundTruthRecord {
                    sample_id: i as u32,
                    scenario_id: "synthetic".into(),
                    position: p,
                    snr_db: snr,
                }
            })
            .collect();
        let gt = GroundTruthSet { records };
        let entries = gt
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let truth = exhaustive_sweep(&r.snr_db).expect("sweep");
                let label = if i < correct { truth } else { (truth + 3) % beams };
                let mut snr = vec![0.0f32; beams];
                snr[label] = 10.0;
                LookupEntry { rx_index: i as u32, snr_db: snr, n_rays: vec![1; beams] }
            })
            .collect();
        let twin = TwinTable {
            table: LookupTable {
                twin_id: 2,
                scenario_id: "synthetic".into(),
                n_beams: beams as u32,
                entries,
                comp_cost: total_cost(1.0, 10.0),
            },
            grid,
        };
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
        let mut student = NearestNeighborPredictor::new(beams);
        let labeled = fine_tune(&mut student, &twin, &samples, 1.0, 0x09ac).expect("fine-tune");
        assert_eq!(labeled, n, "ratio 1.0 labels every sample");

        let predicted: Vec<Vec<f64>> = samples.iter().map(|s| student.predict(s)).collect();
        let query = AccuracyQuery::new(1, 0.0).expect("query");
        let accuracy = acc_kt(&gt, &predicted, &query).expect("accuracy");
        assert_eq!(
            accuracy,
            correct as f64 / n as f64,
            "on-grid top-1 accuracy equals the table's correct fraction exactly"
        );
    });
}

#[test]
fn criterion_10_external_dataset_numbers() {
    criterion(
        10,
        "external-dataset-numbers declared non-reproducible \
         (ingestion schema verified; substituted by criteria 4-9)",
        || {
            // The published aggregate accuracies and the measured-codebook
            // comparison value need datasets this artifact cannot ship.
            // What is checked here: the ingestion paths those numbers flow
            // through, on synthetic stand-ins.
            let dir = tempfile::tempdir().expect("tempdir");
            let path = dir.path().join("campaign.csv");
            let beams = 34usize;
            let mut rng = ChaCha8Rng::seed_from_u64(0x10ac);
            let records: Vec<GroundTruthRecord> = (0..4)
                .map(|i| GroundTruthRecord {
                    sample_id: i,
                    scenario_id: "supplied".into(),
                    position: Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), 1.5),
                    snr_db: (0..beams).map(|_| rng.gen_range(-30.0..30.0)).collect(),
                })
                .collect();
            let gt = GroundTruthSet { records };

            // 1. The campaign schema round-trips exactly.
            write_ground_truth_csv(&gt, &path).expect("write campaign");
            let header = std::fs::read_to_string(&path).expect("read campaign");
            let mut expected = String::from("sample_id,scenario_id,pos_x,pos_y,pos_z");
            for b in 0..beams {
                expected.push_str(&format!(",snr_{b}"));
            }
            assert_eq!(header.lines().next(), Some(expected.as_str()), "campaign header");
            let loaded = load_ground_truth_csv(&path).expect("load campaign");
            assert_eq!(loaded, gt, "campaign values survive the round trip");

            // 2. Top-10 accuracy is computable on supplied data; a
            //    predictor equal to the measurements scores 1.
            let predicted: Vec<Vec<f64>> = loaded.records.iter().map(|r| r.snr_db.clone()).collect();
            let query = AccuracyQuery::new(10, 0.0).expect("query");
            assert_eq!(acc_kt(&loaded, &predicted, &query).unwrap(), 1.0, "top-10 on itself");

            // 3. The measured-codebook comparison path yields a bounded
            //    score for any pair of same-shaped books.
            let mut rng = ChaCha8Rng::seed_from_u64(0x10ac + 1);
            let book_a = Codebook { beams: (0..3).map(|_| random_pattern(&mut rng, 6, 2)).collect() };
            let book_b = Codebook { beams: (0..3).map(|_| random_pattern(&mut rng, 6, 2)).collect() };
            let delta = mean_codebook_discrepancy(&book_a, &book_b).expect("mean delta");
            assert!((0.0..=2.0).contains(&delta), "comparison score {delta} bounded");
        },
    );
}

#[test]
fn criterion_11_determinism() {
    criterion(11, "determinism", || {
        let opts = FixtureOptions {
            seed: 21,
            beams: 10,
            samples: 20,
            grid_points: 21,
            labeling_ratio: 0.5,
            ..FixtureOptions::default()
        };
        let mut harvests = Vec::new();
        for workers in ["1", "1", "4"] {
            let dir = tempfile::tempdir().expect("tempdir");
            write_workspace(dir.path(), &opts);
            let env = [("TWINBEAM_WORKERS", workers)];
            let trace = run_with_env(dir.path(), &["trace", "--config", "run.toml"], &env);
            assert_success(&trace, "trace");
            let pipeline = run_with_env(dir.path(), &["pipeline", "--config", "run.toml"], &env);
            assert_success(&pipeline, "pipeline");
            harvests.push(artifact_bytes(dir.path()));
        }
        for expected in ["twin_1.lt", "twin_2.lt", "trace_manifest.json", "ground_truth.csv",
            "dispatch_trace.jsonl", "report.json", "pipeline_manifest.json"]
        {
            assert!(harvests[0].contains_key(expected), "{expected} produced");
        }
        assert_eq!(
            harvests[0], harvests[1],
            "same seed, same worker count: byte-identical artifacts"
        );
        assert_eq!(
            harvests[0], harvests[2],
            "same seed, different worker count: byte-identical artifacts"
        );
    });
}
