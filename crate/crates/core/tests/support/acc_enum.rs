//! Accuracy-metric oracle shared by the integration and acceptance suites:
//! on randomized batches, the parallel acc_kt must equal a direct
//! double-loop enumeration, and grow monotonically in both the shortlist
//! size K and the tolerance T.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinbeam_core::metrics::{acc_kt, AccuracyQuery};
use twinbeam_core::pipeline::{GroundTruthRecord, GroundTruthSet};
use twinbeam_core::world::Vec3;

fn random_batch(rng: &mut ChaCha8Rng) -> (GroundTruthSet, Vec<Vec<f64>>) {
    let n_beams = rng.gen_range(2..=34);
    let n_samples = rng.gen_range(1..=20);
    let mut gt_rows = Vec::with_capacity(n_samples);
    let mut predicted = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        gt_rows.push((0..n_beams).map(|_| rng.gen_range(-60.0..30.0)).collect::<Vec<f64>>());
        // Half the time the prediction correlates with the truth, so hits
        // at small K actually occur.
        let last: &Vec<f64> = gt_rows.last().unwrap();
        let row = if rng.gen_bool(0.5) {
            last.iter().map(|&v| v + rng.gen_range(-6.0..6.0)).collect()
        } else {
            (0..n_beams).map(|_| rng.gen_range(-60.0..30.0)).collect()
        };
        predicted.push(row);
    }
    let gt = GroundTruthSet {
        records: gt_rows
            .into_iter()
            .enumerate()
            .map(|(j, snr_db)| GroundTruthRecord {
                sample_id: j as u32,
                scenario_id: "s".into(),
                position: Vec3::new(j as f64, 0.0, 1.645),
                snr_db,
            })
            .collect(),
    };
    (gt, predicted)
}

/// Direct double loop: per sample, pick top-K by repeated scans and check
/// the T-dB set by a second scan.
fn oracle_acc(gt: &GroundTruthSet, predicted: &[Vec<f64>], k: usize, t: f64) -> f64 {
    let mut hits = 0usize;
    for (record, scores) in gt.records.iter().zip(predicted) {
        let best = record.snr_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut remaining: Vec<usize> = (0..scores.len()).collect();
        let mut hit = false;
        for _ in 0..k {
            let (pos, _) = remaining
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                .unwrap();
            let m = remaining.remove(pos);
            if record.snr_db[m] >= best - t {
                hit = true;
            }
        }
        hits += hit as usize;
    }
    hits as f64 / gt.records.len() as f64
}

/// `n_batches` randomized batches where acc_kt must equal the double loop
/// exactly.
pub fn accuracy_oracle_check(n_batches: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for batch in 0..n_batches {
        let (gt, predicted) = random_batch(&mut rng);
        let n_beams = gt.records[0].snr_db.len();
        let k = rng.gen_range(1..=n_beams);
        let t = rng.gen_range(0.0..8.0);
        let q = AccuracyQuery::new(k, t).unwrap();
        let got = acc_kt(&gt, &predicted, &q).unwrap();
        let expected = oracle_acc(&gt, &predicted, k, t);
        assert_eq!(got, expected, "batch {batch}: K={k} T={t}");
    }
}

/// `n_batches` randomized batches where accuracy must be non-decreasing in
/// K at fixed T and in T at fixed K.
pub fn accuracy_monotonicity_check(n_batches: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for batch in 0..n_batches {
        let (gt, predicted) = random_batch(&mut rng);
        let n_beams = gt.records[0].snr_db.len();
        let acc = |k: usize, t: f64| {
            acc_kt(&gt, &predicted, &AccuracyQuery::new(k, t).unwrap()).unwrap()
        };
        let t = rng.gen_range(0.0..4.0);
        let mut prev = 0.0;
        for k in 1..=n_beams.min(12) {
            let a = acc(k, t);
            assert!(a >= prev, "batch {batch}: K step {k} dropped {prev} -> {a}");
            prev = a;
        }
        let k = rng.gen_range(1..=n_beams);
        let mut prev = 0.0;
        for step in 0..6 {
            let a = acc(k, step as f64);
            assert!(a >= prev, "batch {batch}: T step {step} dropped {prev} -> {a}");
            prev = a;
        }
    }
}
