//! Independent ray-tracing oracles shared by the integration and acceptance
//! suites: the closed-form free-space link budget for line-of-sight scenes,
//! and a from-scratch brute-force image-sequence enumerator (own vector
//! arithmetic, reads only compiled face geometry) for reflective canyons.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use twinbeam_core::antenna::AntennaPattern;
use twinbeam_core::raytracer::{
    received_power, trace_paths, PropagationConfig, Scene, SummationMode,
};
use twinbeam_core::world::{Aabb, Building, Material, Placement, Road, Vec3, WorldModel};

fn material(name: &str, magnitude: f64, phase_rad: f64) -> Material {
    Material {
        name: name.to_string(),
        reflection_magnitude: magnitude,
        reflection_phase_rad: phase_rad,
    }
}

/// A flat, fully absorbing world: the direct ray is the only contributor.
fn open_world(extent: f64) -> WorldModel {
    WorldModel {
        schema_version: 1,
        map_id: "open".into(),
        bounds: Aabb { min: [-extent, -extent, 0.0], max: [extent, extent, 60.0] },
        materials: vec![material("absorber", 0.0, 0.0)],
        road: Road { material: "absorber".into() },
        buildings: Vec::new(),
        obstacles: Vec::new(),
        tx: Placement { position: [0.0, 0.0], height: 5.0, facing_az_deg: 0.0 },
    }
}

/// Line-of-sight received power must match the analytic free-space value
/// (spreading `lambda/(4*pi*d)`, inverse-square law) within 1e-6 relative
/// over 1-100 m.
pub fn friis_los_check() {
    let world = open_world(150.0);
    let iso = AntennaPattern::isotropic();
    let cfg = PropagationConfig { max_range_m: 150.0, ..PropagationConfig::default() };
    let lambda = cfg.wavelength_m();
    let prefactor = lambda * lambda / (8.0 * PI * 377.0);

    let mut reference_1m = None;
    for d in 1..=100 {
        let d = d as f64;
        let rx = Vec3::new(d, 0.0, 5.0);
        let paths = trace_paths(&world, &iso, &iso, rx, &cfg);
        assert_eq!(paths.len(), 1, "only the direct ray survives at {d} m");
        let got = received_power(&paths, &iso, &cfg);

        let spreading = lambda / (4.0 * PI * d);
        let expected_watts = prefactor * spreading * spreading;
        let rel = (got.watts - expected_watts).abs() / expected_watts;
        assert!(rel < 1e-6, "free-space mismatch at {d} m: rel {rel:e}");

        // Inverse-square law against the 1 m anchor.
        match reference_1m {
            None => reference_1m = Some(got.watts),
            Some(p1) => {
                let rel = (got.watts * d * d - p1).abs() / p1;
                assert!(rel < 1e-9, "inverse-square drift at {d} m: rel {rel:e}");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Independent enumerator with its own 3-vector arithmetic.
// ---------------------------------------------------------------------------

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: V, b: V) -> V {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: V, s: f64) -> V {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: V, b: V) -> V {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn norm(a: V) -> f64 {
    dot(a, a).sqrt()
}
fn dist(a: V, b: V) -> f64 {
    norm(sub(a, b))
}

struct OracleFace {
    corner: V,
    eu: V,
    ev: V,
    unit_normal: V,
    reflection: Complex64,
}

const TOL: f64 = 1e-9;
const SLACK: f64 = 1e-6;

impl OracleFace {
    fn signed(&self, p: V) -> f64 {
        dot(sub(p, self.corner), self.unit_normal)
    }

    fn mirror(&self, p: V) -> V {
        sub(p, scale(self.unit_normal, 2.0 * self.signed(p)))
    }

    /// Intersection parameter and point of segment a->b with the plane.
    fn plane_hit(&self, a: V, b: V) -> Option<(f64, V)> {
        let denom = dot(sub(b, a), self.unit_normal);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = -self.signed(a) / denom;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        Some((t, add(a, scale(sub(b, a), t))))
    }

    fn inside(&self, p: V) -> bool {
        let r = sub(p, self.corner);
        let lu2 = dot(self.eu, self.eu);
        let lv2 = dot(self.ev, self.ev);
        let u = dot(r, self.eu) / lu2;
        let v = dot(r, self.ev) / lv2;
        let tu = TOL / lu2.sqrt();
        let tv = TOL / lv2.sqrt();
        u >= -tu && u <= 1.0 + tu && v >= -tv && v <= 1.0 + tv
    }
}

fn oracle_faces(scene: &Scene) -> Vec<OracleFace> {
    scene
        .faces
        .iter()
        .map(|f| {
            let corner = [f.rect.origin.x, f.rect.origin.y, f.rect.origin.z];
            let eu = [f.rect.edge_u.x, f.rect.edge_u.y, f.rect.edge_u.z];
            let ev = [f.rect.edge_v.x, f.rect.edge_v.y, f.rect.edge_v.z];
            let n = cross(eu, ev);
            OracleFace {
                corner,
                eu,
                ev,
                unit_normal: scale(n, 1.0 / norm(n)),
                reflection: f.reflection,
            }
        })
        .collect()
}

fn blocked(faces: &[OracleFace], a: V, b: V) -> bool {
    faces.iter().any(|f| match f.plane_hit(a, b) {
        Some((_, p)) if f.inside(p) => dist(p, a) > SLACK && dist(p, b) > SLACK,
        _ => false,
    })
}

/// Solve one ordered reflection sequence by the image construction; `None`
/// when no valid unobstructed specular path exists.
fn oracle_solve(
    faces: &[OracleFace],
    seq: &[usize],
    tx: V,
    rx: V,
    lambda: f64,
) -> Option<(f64, Complex64)> {
    if seq.is_empty() {
        if blocked(faces, tx, rx) {
            return None;
        }
        let l = dist(tx, rx);
        let amp = Complex64::from_polar(lambda / (4.0 * PI * l), -2.0 * PI * l / lambda);
        return Some((l, amp));
    }

    let mut images = vec![tx];
    for &fid in seq {
        images.push(faces[fid].mirror(*images.last().unwrap()));
    }

    let mut points = vec![[0.0; 3]; seq.len()];
    let mut next = rx;
    for (j, &fid) in seq.iter().enumerate().rev() {
        let (t, p) = faces[fid].plane_hit(images[j + 1], next)?;
        if !(t > 1e-12 && t < 1.0 - 1e-12) || !faces[fid].inside(p) {
            return None;
        }
        points[j] = p;
        next = p;
    }

    let mut vertices = vec![tx];
    vertices.extend(points.iter().copied());
    vertices.push(rx);
    for (j, &fid) in seq.iter().enumerate() {
        if faces[fid].signed(vertices[j]) < TOL || faces[fid].signed(vertices[j + 2]) < TOL {
            return None;
        }
    }

    let mut length = 0.0;
    for w in vertices.windows(2) {
        if blocked(faces, w[0], w[1]) {
            return None;
        }
        length += dist(w[0], w[1]);
    }

    let mut amp = Complex64::from_polar(lambda / (4.0 * PI * length), -2.0 * PI * length / lambda);
    for &fid in seq {
        amp *= faces[fid].reflection;
    }
    Some((length, amp))
}

/// Every face sequence up to the reflection budget, no consecutive repeats.
fn oracle_paths(
    faces: &[OracleFace],
    tx: V,
    rx: V,
    max_depth: usize,
    lambda: f64,
) -> Vec<(Vec<usize>, f64, Complex64)> {
    let mut out = Vec::new();
    if let Some((l, a)) = oracle_solve(faces, &[], tx, rx, lambda) {
        out.push((Vec::new(), l, a));
    }
    let mut stack = Vec::new();
    enumerate(faces, tx, rx, max_depth, lambda, &mut stack, &mut out);
    out
}

fn enumerate(
    faces: &[OracleFace],
    tx: V,
    rx: V,
    max_depth: usize,
    lambda: f64,
    stack: &mut Vec<usize>,
    out: &mut Vec<(Vec<usize>, f64, Complex64)>,
) {
    if stack.len() >= max_depth {
        return;
    }
    for fid in 0..faces.len() {
        if stack.last() == Some(&fid) {
            continue;
        }
        stack.push(fid);
        if let Some((l, a)) = oracle_solve(faces, stack, tx, rx, lambda) {
            out.push((stack.clone(), l, a));
        }
        enumerate(faces, tx, rx, max_depth, lambda, stack, out);
        stack.pop();
    }
}

/// A random street canyon: two parallel building walls over a reflective
/// road, with Tx and Rx between them.
fn random_canyon(rng: &mut ChaCha8Rng) -> (WorldModel, Vec3) {
    let half_w = rng.gen_range(4.0..9.0);
    let span = rng.gen_range(25.0..45.0);
    let h1 = rng.gen_range(6.0..18.0);
    let h2 = rng.gen_range(6.0..18.0);
    let wall = material("wall", rng.gen_range(0.25..0.9), rng.gen_range(2.0..4.0));
    let asphalt = material("asphalt", rng.gen_range(0.2..0.8), PI);

    let tx = [rng.gen_range(-8.0..8.0), rng.gen_range(-half_w + 1.5..half_w - 1.5)];
    let tx_h = rng.gen_range(2.5..6.0);
    let rx = loop {
        let p = Vec3::new(
            rng.gen_range(-8.0..8.0),
            rng.gen_range(-half_w + 1.5..half_w - 1.5),
            rng.gen_range(1.0..3.0),
        );
        if ((p.x - tx[0]).powi(2) + (p.y - tx[1]).powi(2)).sqrt() > 2.0 {
            break p;
        }
    };

    let world = WorldModel {
        schema_version: 1,
        map_id: "canyon".into(),
        bounds: Aabb {
            min: [-span, -half_w - 12.0, 0.0],
            max: [span, half_w + 12.0, 40.0],
        },
        materials: vec![wall, asphalt],
        road: Road { material: "asphalt".into() },
        buildings: vec![
            Building {
                min: [-span, -half_w - 10.0],
                max: [span, -half_w],
                height: h1,
                material: "wall".into(),
            },
            Building {
                min: [-span, half_w],
                max: [span, half_w + 10.0],
                height: h2,
                material: "wall".into(),
            },
        ],
        obstacles: Vec::new(),
        tx: Placement { position: tx, height: tx_h, facing_az_deg: 0.0 },
    };
    (world, rx)
}

/// On `n_scenes` randomized canyons with up to 3 reflections, the tracer's
/// path multiset (keyed by the ordered face sequence) and per-path complex
/// amplitudes must match the brute-force enumerator to 1e-9 relative.
pub fn canyon_enumerator_check(n_scenes: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let iso = AntennaPattern::isotropic();
    let cfg = PropagationConfig {
        max_diffractions: 0,
        sensitivity_dbm: -500.0, // no silent drops while comparing path sets
        max_range_m: 200.0,
        summation: SummationMode::PowerSum,
        ..PropagationConfig::default()
    };
    let lambda = cfg.wavelength_m();

    let mut total_paths = 0usize;
    let mut reflected_paths = 0usize;
    for scene_no in 0..n_scenes {
        let (world, rx) = random_canyon(&mut rng);
        let scene = Scene::compile(&world);
        let faces = oracle_faces(&scene);
        let tx = [scene.tx_position.x, scene.tx_position.y, scene.tx_position.z];

        let expected = oracle_paths(&faces, tx, [rx.x, rx.y, rx.z], 3, lambda);
        let got = trace_paths(&world, &iso, &iso, rx, &cfg);

        assert_eq!(
            got.len(),
            expected.len(),
            "scene {scene_no}: path count {} vs oracle {}",
            got.len(),
            expected.len()
        );
        for (seq, length, amp) in &expected {
            let key: Vec<u32> = seq.iter().map(|&f| f as u32).collect();
            let matches: Vec<_> = got.iter().filter(|p| p.faces_touched == key).collect();
            assert_eq!(matches.len(), 1, "scene {scene_no}: sequence {key:?} multiplicity");
            let path = matches[0];
            let rel_len = (path.path_length_m - length).abs() / length;
            assert!(rel_len < 1e-12, "scene {scene_no}: length mismatch on {key:?}");
            let rel_amp = (path.amplitude - amp).norm() / amp.norm();
            assert!(
                rel_amp < 1e-9,
                "scene {scene_no}: amplitude mismatch on {key:?}: rel {rel_amp:e}"
            );
            if !seq.is_empty() {
                reflected_paths += 1;
            }
        }
        total_paths += expected.len();
    }

    // The fixture must actually exercise multipath, not vacuous agreement.
    assert!(total_paths >= 4 * n_scenes, "only {total_paths} paths across {n_scenes} scenes");
    assert!(reflected_paths >= 2 * n_scenes, "only {reflected_paths} reflected paths");
}
