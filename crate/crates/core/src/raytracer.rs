//! Deterministic multipath tracer and received-power model.
//!
//! Paths are found with the image method: for every ordered sequence of
//! reflective faces up to the configured bounce depth, the transmitter is
//! mirrored face by face, the reflection points are recovered by walking
//! the mirror chain back from the receiver, and the candidate survives only
//! if every bounce lands inside its face from the front side and every
//! segment is unobstructed. This yields the exact specular solution
//! directly — there is no angular discretization error — so each face
//! sequence produces at most one path.
//!
//! A shooting mode ([`trace_paths_shooting`]) is kept solely to
//! cross-validate the enumeration: it launches rays on a fixed angular
//! lattice, collects those passing within the reception-sphere radius of
//! the receiver, de-duplicates rays that touched the same face sequence by
//! keeping the closest approach, and then snaps each discovered sequence to
//! the exact image solution.
//!
//! Received power coherently sums per-path complex amplitudes weighted by
//! the receive pattern; an incoherent power-sum mode is available for
//! fidelity-monotonicity checks.

use crate::antenna::AntennaPattern;
use crate::geom::{az_el_from_direction, point_segment_distance, Rect3, Vec3};
use crate::world::WorldModel;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;
use thiserror::Error;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// One milliwatt in watts; dBm values are referenced to it.
const MILLIWATT: f64 = 1e-3;
/// Endpoint slack for occlusion tests, meters: a face touching a segment
/// closer than this to either endpoint does not count as blocking.
const ENDPOINT_SLACK: f64 = 1e-6;
/// Tolerance for "point lies inside face" checks, meters.
const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PowerError {
    /// Physical powers cannot be negative.
    #[error("negative power: {0} W")]
    NegativePower(f64),
}

/// How per-path contributions combine into received power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummationMode {
    /// Complex field sum; paths interfere.
    #[default]
    Coherent,
    /// Magnitude-squared sum; adding a path never lowers power.
    PowerSum,
}

/// Physical and budget parameters shared by tracing and power aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    /// Spectrum-overlap ratio scaling received power (dimensionless).
    pub spectrum_overlap: f64,
    /// Free-space wave impedance, ohms.
    pub free_space_impedance_ohm: f64,
    /// Reflection budget per path.
    pub max_reflections: u32,
    /// Transmission budget; geometry is opaque at desk scale, so tracing
    /// supports only 0, but the value still parameterizes the cost model.
    pub max_transmissions: u32,
    /// Diffraction budget per path (0 or 1).
    pub max_diffractions: u32,
    /// Angular spacing of shooting-mode launch directions, degrees; also
    /// sets the reception-sphere radius.
    pub ray_spacing_deg: f64,
    pub noise_power_dbm: f64,
    /// Constant system loss subtracted from received dBm.
    pub system_loss_db: f64,
    /// Largest Tx-Rx distance the reception sphere must cover, meters.
    pub max_range_m: f64,
    /// Per-path drop threshold after receive-gain weighting, dBm.
    pub sensitivity_dbm: f64,
    /// World-frame azimuth the receive antenna boresight points at.
    pub rx_facing_az_deg: f64,
    pub summation: SummationMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            carrier_frequency_hz: 60.0e9,
            bandwidth_hz: 2.16e9,
            spectrum_overlap: 1.0,
            free_space_impedance_ohm: 377.0,
            max_reflections: 3,
            max_transmissions: 0,
            max_diffractions: 1,
            ray_spacing_deg: 0.25,
            noise_power_dbm: -100.99,
            system_loss_db: 0.0,
            max_range_m: 20.0,
            sensitivity_dbm: -250.0,
            rx_facing_az_deg: 180.0,
            summation: SummationMode::Coherent,
        }
    }
}

impl PropagationConfig {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }
}

/// Radius of the sphere around the receiver that shooting-mode rays must
/// pierce to count as received: the launch spacing (radians) times the
/// largest supported range, so neighboring rays cannot straddle a receiver.
pub fn reception_sphere_radius(cfg: &PropagationConfig) -> f64 {
    cfg.ray_spacing_deg.to_radians() * cfg.max_range_m
}

/// What produced a path segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Direct,
    Reflection,
    Diffraction,
}

/// One interaction surface of the compiled scene.
#[derive(Debug, Clone)]
pub struct Face {
    pub id: u32,
    pub rect: Rect3,
    /// Complex reflection coefficient of the face material.
    pub reflection: Complex64,
    /// Human-readable origin, e.g. `building 1 wall -y`.
    pub label: String,
}

/// A straight edge that can diffract (obstacle top or side edge). Edge ids
/// share the face-id namespace, starting after the last face.
#[derive(Debug, Clone)]
pub struct DiffractionEdge {
    pub id: u32,
    pub a: Vec3,
    pub b: Vec3,
    /// Face ids of the body this edge belongs to. A bent path treats that
    /// body as a thin screen, so its own faces never occlude the bend.
    pub owner_faces: Range<u32>,
}

/// Compiled scene geometry: every wall, roof, obstacle face, and the road
/// lowered to planar rectangles, plus diffraction edges and the transmitter.
#[derive(Debug, Clone)]
pub struct Scene {
    pub faces: Vec<Face>,
    pub edges: Vec<DiffractionEdge>,
    pub tx_position: Vec3,
    pub tx_facing_az_deg: f64,
}

impl Scene {
    /// Lower a world model to interaction geometry. Face ids follow the
    /// compile order: road first, then buildings, then obstacles.
    pub fn compile(world: &WorldModel) -> Scene {
        let mut faces = Vec::new();
        let mut edges = Vec::new();
        let refl = |name: &str| {
            let m = world.material(name).expect("world validated: material resolves");
            Complex64::from_polar(m.reflection_magnitude, m.reflection_phase_rad)
        };

        let b = &world.bounds;
        faces.push((
            Rect3::new(
                Vec3::new(b.min[0], b.min[1], 0.0),
                Vec3::new(b.max[0] - b.min[0], 0.0, 0.0),
                Vec3::new(0.0, b.max[1] - b.min[1], 0.0),
            ),
            refl(&world.road.material),
            "road".to_string(),
        ));

        for (i, bl) in world.buildings.iter().enumerate() {
            let cx = (bl.min[0] + bl.max[0]) / 2.0;
            let cy = (bl.min[1] + bl.max[1]) / 2.0;
            let hl = (bl.max[0] - bl.min[0]) / 2.0;
            let hw = (bl.max[1] - bl.min[1]) / 2.0;
            let (rects, _) = box_surfaces(
                Vec3::new(cx, cy, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                hl,
                hw,
                bl.height,
            );
            let names = ["wall -y", "wall +x", "wall +y", "wall -x", "roof"];
            for (rect, name) in rects.into_iter().zip(names) {
                faces.push((rect, refl(&bl.material), format!("building {i} {name}")));
            }
        }

        for (i, ob) in world.obstacles.iter().enumerate() {
            let yaw = ob.yaw_deg.to_radians();
            let ex = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
            let ey = Vec3::new(-yaw.sin(), yaw.cos(), 0.0);
            let (rects, box_edges) = box_surfaces(
                Vec3::new(ob.x, ob.y, 0.0),
                ex,
                ey,
                ob.length / 2.0,
                ob.width / 2.0,
                ob.height,
            );
            let owner = faces.len() as u32..(faces.len() + rects.len()) as u32;
            let names = ["side -v", "side +u", "side +v", "side -u", "top"];
            for (rect, name) in rects.into_iter().zip(names) {
                faces.push((rect, refl(&ob.material), format!("obstacle {i} {name}")));
            }
            edges.extend(box_edges.into_iter().map(|(a, b)| (a, b, owner.clone())));
        }

        let faces: Vec<Face> = faces
            .into_iter()
            .enumerate()
            .map(|(id, (rect, reflection, label))| Face { id: id as u32, rect, reflection, label })
            .collect();
        let n_faces = faces.len() as u32;
        let edges = edges
            .into_iter()
            .enumerate()
            .map(|(k, (a, b, owner_faces))| DiffractionEdge {
                id: n_faces + k as u32,
                a,
                b,
                owner_faces,
            })
            .collect();

        Scene {
            faces,
            edges,
            tx_position: world.tx.point(),
            tx_facing_az_deg: world.tx.facing_az_deg,
        }
    }

    fn face(&self, id: u32) -> &Face {
        &self.faces[id as usize]
    }

    /// Whether any face blocks the open segment `a -> b`.
    fn segment_blocked(&self, a: Vec3, b: Vec3) -> bool {
        self.segment_blocked_excluding(a, b, &(0..0))
    }

    /// Like [`Scene::segment_blocked`], ignoring the faces in `skip`.
    fn segment_blocked_excluding(&self, a: Vec3, b: Vec3, skip: &Range<u32>) -> bool {
        for face in &self.faces {
            if skip.contains(&face.id) {
                continue;
            }
            if let Some((_, p)) = face.rect.segment_hit(a, b, FACE_TOL) {
                if p.distance(a) > ENDPOINT_SLACK && p.distance(b) > ENDPOINT_SLACK {
                    return true;
                }
            }
        }
        false
    }
}

/// Side rectangles (outward normals) and top of a box standing on z = 0,
/// plus its top-perimeter and vertical edges for diffraction.
#[allow(clippy::type_complexity)]
fn box_surfaces(
    center: Vec3,
    ex: Vec3,
    ey: Vec3,
    half_u: f64,
    half_v: f64,
    height: f64,
) -> (Vec<Rect3>, Vec<(Vec3, Vec3)>) {
    let up = Vec3::new(0.0, 0.0, height);
    let c00 = center - ex * half_u - ey * half_v;
    let c10 = center + ex * half_u - ey * half_v;
    let c11 = center + ex * half_u + ey * half_v;
    let c01 = center - ex * half_u + ey * half_v;
    let rects = vec![
        Rect3::new(c00, ex * (2.0 * half_u), up),         // -v side, normal -ey
        Rect3::new(c10, ey * (2.0 * half_v), up),         // +u side, normal +ex
        Rect3::new(c11, ex * (-2.0 * half_u), up),        // +v side, normal +ey
        Rect3::new(c01, ey * (-2.0 * half_v), up),        // -u side, normal -ex
        Rect3::new(c00 + up, ex * (2.0 * half_u), ey * (2.0 * half_v)), // top, normal +z
    ];
    let t = |p: Vec3| p + up;
    let edges = vec![
        (t(c00), t(c10)),
        (t(c10), t(c11)),
        (t(c11), t(c01)),
        (t(c01), t(c00)),
        (c00, t(c00)),
        (c10, t(c10)),
        (c11, t(c11)),
        (c01, t(c01)),
    ];
    (rects, edges)
}

/// One propagation path from transmitter to receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    /// Tx, every interaction point, Rx.
    pub vertices: Vec<Vec3>,
    /// Kind per segment; `segments.len() == vertices.len() - 1`. Entry 0 is
    /// always `Direct` (the launch); later entries name the interaction at
    /// the segment's starting vertex.
    pub segments: Vec<SegmentKind>,
    /// Launch direction in the transmit antenna frame, degrees.
    pub departure_az_deg: f64,
    pub departure_el_deg: f64,
    /// Direction toward the last interaction (or Tx) in the receive
    /// antenna frame, degrees.
    pub arrival_az_deg: f64,
    pub arrival_el_deg: f64,
    /// Total unfolded length, meters.
    pub path_length_m: f64,
    /// Complex amplitude at the receiver before receive-gain weighting:
    /// transmit gain at departure x free-space spreading `lambda / (4 pi L)`
    /// x reflection coefficients x diffraction coefficient x `e^{-j 2 pi L / lambda}`.
    pub amplitude: Complex64,
    /// Ordered ids of touched faces (diffraction edges share the id space).
    pub faces_touched: Vec<u32>,
}

/// Geometric path candidate before any antenna weighting.
#[derive(Clone)]
struct GeomPath {
    vertices: Vec<Vec3>,
    segments: Vec<SegmentKind>,
    faces_touched: Vec<u32>,
    path_length_m: f64,
    /// Spreading x reflection/diffraction coefficients x propagation phase.
    base_amplitude: Complex64,
    departure_world: Vec3,
    arrival_world: Vec3,
}

/// Exact image-method solution for one ordered face sequence, if the
/// specular path exists and is unobstructed. An empty sequence solves the
/// direct path.
fn solve_sequence(scene: &Scene, sequence: &[u32], rx: Vec3, cfg: &PropagationConfig) -> Option<GeomPath> {
    let tx = scene.tx_position;
    if sequence.is_empty() {
        if scene.segment_blocked(tx, rx) {
            return None;
        }
        let length = tx.distance(rx);
        if length <= 0.0 {
            return None;
        }
        return Some(GeomPath {
            vertices: vec![tx, rx],
            segments: vec![SegmentKind::Direct],
            faces_touched: Vec::new(),
            path_length_m: length,
            base_amplitude: spread_phase(length, 1.0, cfg),
            departure_world: (rx - tx).normalized(),
            arrival_world: (tx - rx).normalized(),
        });
    }

    // Forward pass: mirror the transmitter across each face in order.
    let mut images = Vec::with_capacity(sequence.len() + 1);
    images.push(tx);
    for &fid in sequence {
        let prev = *images.last().unwrap();
        images.push(scene.face(fid).rect.mirror(prev));
    }

    // Backward pass: recover bounce points from the receiver.
    let mut points = vec![Vec3::ZERO; sequence.len()];
    let mut next = rx;
    for (j, &fid) in sequence.iter().enumerate().rev() {
        let rect = &scene.face(fid).rect;
        let (t, p) = rect.segment_plane_hit(images[j + 1], next)?;
        if !(t > 1e-12 && t < 1.0 - 1e-12) || !rect.contains_on_plane(p, FACE_TOL) {
            return None;
        }
        points[j] = p;
        next = p;
    }

    // Each bounce must see its neighbors from the face's front side.
    let mut vertices = Vec::with_capacity(sequence.len() + 2);
    vertices.push(tx);
    vertices.extend(points.iter().copied());
    vertices.push(rx);
    for (j, &fid) in sequence.iter().enumerate() {
        let rect = &scene.face(fid).rect;
        if rect.signed_distance(vertices[j]) < FACE_TOL
            || rect.signed_distance(vertices[j + 2]) < FACE_TOL
        {
            return None;
        }
    }

    // All segments must be unobstructed.
    let mut length = 0.0;
    for w in vertices.windows(2) {
        if scene.segment_blocked(w[0], w[1]) {
            return None;
        }
        length += w[0].distance(w[1]);
    }

    let mut coeff = Complex64::new(1.0, 0.0);
    for &fid in sequence {
        coeff *= scene.face(fid).reflection;
    }
    let mut segments = vec![SegmentKind::Direct];
    segments.extend(std::iter::repeat(SegmentKind::Reflection).take(sequence.len()));
    Some(GeomPath {
        vertices: vertices.clone(),
        segments,
        faces_touched: sequence.to_vec(),
        path_length_m: length,
        base_amplitude: spread_phase(length, 1.0, cfg) * coeff,
        departure_world: (vertices[1] - tx).normalized(),
        arrival_world: (vertices[vertices.len() - 2] - rx).normalized(),
    })
}

/// Free-space spreading and propagation phase for a path of length `l`.
fn spread_phase(l: f64, scale: f64, cfg: &PropagationConfig) -> Complex64 {
    let lambda = cfg.wavelength_m();
    Complex64::from_polar(scale * lambda / (4.0 * PI * l), -2.0 * PI * l / lambda)
}

/// Single knife-edge diffraction, applied only when the diffraction budget
/// allows and the direct path is blocked. Each body whose faces block the
/// direct segment contributes at most one bent path: the body is abstracted
/// as a thin screen, and the governing edge is the one with the shortest
/// bent detour that clears the rest of the scene.
fn diffraction_paths(scene: &Scene, rx: Vec3, cfg: &PropagationConfig) -> Vec<GeomPath> {
    let tx = scene.tx_position;
    if cfg.max_diffractions == 0 || scene.edges.is_empty() || !scene.segment_blocked(tx, rx) {
        return Vec::new();
    }
    let lambda = cfg.wavelength_m();
    let mut out = Vec::new();
    // Edges arrive grouped by owning body, in compile order.
    let mut i = 0;
    while i < scene.edges.len() {
        let owner = scene.edges[i].owner_faces.clone();
        let mut end = i;
        while end < scene.edges.len() && scene.edges[end].owner_faces == owner {
            end += 1;
        }
        let group = &scene.edges[i..end];
        i = end;

        // Only bodies that actually stand in the direct segment diffract.
        let blocks = owner.clone().any(|fid| {
            scene.faces[fid as usize]
                .rect
                .segment_hit(tx, rx, FACE_TOL)
                .map_or(false, |(_, p)| {
                    p.distance(tx) > ENDPOINT_SLACK && p.distance(rx) > ENDPOINT_SLACK
                })
        });
        if !blocks {
            continue;
        }

        let mut best: Option<(f64, &DiffractionEdge, Vec3)> = None;
        for edge in group {
            // Bend point: minimize |tx - p| + |p - rx| over the edge by
            // ternary search (the objective is convex in the edge parameter).
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let at = |t: f64| edge.a + (edge.b - edge.a) * t;
            let len = |t: f64| tx.distance(at(t)) + at(t).distance(rx);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if len(m1) <= len(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let bend = at((lo + hi) / 2.0);
            // The owner acts as a knife screen: its own faces never occlude
            // the bend, everything else still does.
            if scene.segment_blocked_excluding(tx, bend, &owner)
                || scene.segment_blocked_excluding(bend, rx, &owner)
            {
                continue;
            }
            let total = tx.distance(bend) + bend.distance(rx);
            if tx.distance(bend) <= 0.0 || bend.distance(rx) <= 0.0 {
                continue;
            }
            // Shortest detour wins; exact ties keep the lowest edge id.
            if best.as_ref().map_or(true, |(l, _, _)| total < *l) {
                best = Some((total, edge, bend));
            }
        }
        let Some((length, edge, bend)) = best else {
            continue;
        };

        // Fresnel-Kirchhoff parameter from the edge's clearance over the
        // straight line, then the standard single-knife-edge loss.
        let (clearance, _) = point_segment_distance(bend, tx, rx);
        let d1 = tx.distance(bend);
        let d2 = bend.distance(rx);
        let nu = clearance * (2.0 * (d1 + d2) / (lambda * d1 * d2)).sqrt();
        let loss_db = if nu > -0.78 {
            6.9 + 20.0 * (((nu - 0.1).powi(2) + 1.0).sqrt() + nu - 0.1).log10()
        } else {
            0.0
        };
        let coeff = 10f64.powf(-loss_db / 20.0);
        out.push(GeomPath {
            vertices: vec![tx, bend, rx],
            segments: vec![SegmentKind::Direct, SegmentKind::Diffraction],
            faces_touched: vec![edge.id],
            path_length_m: length,
            base_amplitude: spread_phase(length, coeff, cfg),
            departure_world: (bend - tx).normalized(),
            arrival_world: (bend - rx).normalized(),
        });
    }
    out
}

/// All geometric paths for one receiver position, in deterministic order:
/// direct, then reflection sequences depth-first by face id, then
/// diffraction candidates by edge id.
fn geometric_paths(scene: &Scene, rx: Vec3, cfg: &PropagationConfig) -> Vec<GeomPath> {
    let mut out = Vec::new();
    out.extend(solve_sequence(scene, &[], rx, cfg));
    let n = scene.faces.len() as u32;
    let mut stack: Vec<u32> = Vec::new();
    fn recurse(
        scene: &Scene,
        rx: Vec3,
        cfg: &PropagationConfig,
        n: u32,
        stack: &mut Vec<u32>,
        out: &mut Vec<GeomPath>,
    ) {
        if stack.len() as u32 >= cfg.max_reflections {
            return;
        }
        for fid in 0..n {
            if stack.last() == Some(&fid) {
                continue; // consecutive bounces off one face cannot happen
            }
            stack.push(fid);
            out.extend(solve_sequence(scene, stack, rx, cfg));
            recurse(scene, rx, cfg, n, stack, out);
            stack.pop();
        }
    }
    recurse(scene, rx, cfg, n, &mut stack, &mut out);
    out.extend(diffraction_paths(scene, rx, cfg));
    out
}

/// World-frame direction to antenna-frame `(az, el)` in degrees, given the
/// antenna's boresight azimuth.
fn to_antenna_frame(dir: Vec3, facing_az_deg: f64) -> (f64, f64) {
    let (az, el) = az_el_from_direction(dir);
    let mut rel = az - facing_az_deg;
    while rel > 180.0 {
        rel -= 360.0;
    }
    while rel < -180.0 {
        rel += 360.0;
    }
    (rel, el)
}

/// Apply transmit-beam gain and the sensitivity cut to geometric paths.
fn weigh_paths(
    geoms: Vec<GeomPath>,
    scene: &Scene,
    tx_pattern: &AntennaPattern,
    rx_pattern: &AntennaPattern,
    cfg: &PropagationConfig,
) -> Vec<RayPath> {
    let prefactor = power_prefactor(cfg);
    geoms
        .into_iter()
        .filter_map(|g| {
            let (daz, del) = to_antenna_frame(g.departure_world, scene.tx_facing_az_deg);
            let (aaz, ael) = to_antenna_frame(g.arrival_world, cfg.rx_facing_az_deg);
            let (ta, tp) = tx_pattern.gain(daz, del);
            let amplitude = g.base_amplitude * Complex64::from_polar(ta, tp);
            // Per-path sensitivity check includes the receive gain.
            let (ra, rp) = rx_pattern.gain(aaz, ael);
            let contribution = amplitude * Complex64::from_polar(ra, rp);
            let path_dbm = watts_to_dbm_lossy(prefactor * contribution.norm_sqr(), cfg.system_loss_db);
            if path_dbm < cfg.sensitivity_dbm {
                return None;
            }
            Some(RayPath {
                vertices: g.vertices,
                segments: g.segments,
                departure_az_deg: daz,
                departure_el_deg: del,
                arrival_az_deg: aaz,
                arrival_el_deg: ael,
                path_length_m: g.path_length_m,
                amplitude,
                faces_touched: g.faces_touched,
            })
        })
        .collect()
}

/// Trace every propagation path from the world's transmitter to `rx` for
/// one transmit beam. See the module docs for the path model.
pub fn trace_paths(
    world: &WorldModel,
    tx_pattern: &AntennaPattern,
    rx_pattern: &AntennaPattern,
    rx: Vec3,
    cfg: &PropagationConfig,
) -> Vec<RayPath> {
    let scene = Scene::compile(world);
    trace_paths_in_scene(&scene, tx_pattern, rx_pattern, rx, cfg)
}

/// [`trace_paths`] against a pre-compiled scene; use this when sweeping
/// many receivers or beams over one world.
pub fn trace_paths_in_scene(
    scene: &Scene,
    tx_pattern: &AntennaPattern,
    rx_pattern: &AntennaPattern,
    rx: Vec3,
    cfg: &PropagationConfig,
) -> Vec<RayPath> {
    weigh_paths(geometric_paths(scene, rx, cfg), scene, tx_pattern, rx_pattern, cfg)
}

/// Trace one receiver against every transmit beam at once. The geometric
/// path set does not depend on the beam, so it is solved a single time and
/// re-weighted per pattern; the result matches [`trace_paths_in_scene`]
/// called per beam exactly.
pub fn trace_paths_beams(
    scene: &Scene,
    tx_beams: &[AntennaPattern],
    rx_pattern: &AntennaPattern,
    rx: Vec3,
    cfg: &PropagationConfig,
) -> Vec<Vec<RayPath>> {
    let geoms = geometric_paths(scene, rx, cfg);
    tx_beams
        .iter()
        .map(|beam| weigh_paths(geoms.clone(), scene, beam, rx_pattern, cfg))
        .collect()
}

/// Shooting-mode tracer used to cross-validate the image method.
///
/// Rays launch on a `ray_spacing_deg` lattice, bounce specularly up to the
/// reflection budget, and register a candidate whenever a segment passes
/// within [`reception_sphere_radius`] of the receiver. Candidates sharing a
/// face sequence collapse to the closest approach, then each surviving
/// sequence is snapped to its exact image solution. Diffraction is not
/// modeled in this mode.
pub fn trace_paths_shooting(
    scene: &Scene,
    tx_pattern: &AntennaPattern,
    rx_pattern: &AntennaPattern,
    rx: Vec3,
    cfg: &PropagationConfig,
) -> Vec<RayPath> {
    let radius = reception_sphere_radius(cfg);
    let step = cfg.ray_spacing_deg;
    // candidate sequences -> closest approach seen
    let mut candidates: Vec<(Vec<u32>, f64)> = Vec::new();
    let mut register = |seq: &[u32], dist: f64| {
        if let Some(entry) = candidates.iter_mut().find(|(s, _)| s == seq) {
            if dist < entry.1 {
                entry.1 = dist;
            }
        } else {
            candidates.push((seq.to_vec(), dist));
        }
    };

    let n_el = (180.0 / step).ceil() as i64;
    let n_az = (360.0 / step).ceil() as i64;
    for ei in 0..=n_el {
        let el = -90.0 + 180.0 * ei as f64 / n_el as f64;
        for ai in 0..n_az {
            let az = -180.0 + 360.0 * ai as f64 / n_az as f64;
            let mut origin = scene.tx_position;
            let mut dir = crate::geom::direction_from_az_el(az, el);
            let mut touched: Vec<u32> = Vec::new();
            for _bounce in 0..=cfg.max_reflections {
                // March to the nearest face, skipping hits at the origin.
                let far = origin + dir * (4.0 * cfg.max_range_m + 100.0);
                let mut nearest: Option<(f64, Vec3, u32)> = None;
                for face in &scene.faces {
                    if let Some((t, p)) = face.rect.segment_hit(origin, far, FACE_TOL) {
                        if p.distance(origin) <= ENDPOINT_SLACK {
                            continue;
                        }
                        if dir.dot(face.rect.normal) >= 0.0 {
                            continue; // back side: opaque, no specular bounce
                        }
                        if nearest.map_or(true, |(bt, _, _)| t < bt) {
                            nearest = Some((t, p, face.id));
                        }
                    }
                }
                let segment_end = nearest.map_or(far, |(_, p, _)| p);
                let (dist, _) = point_segment_distance(rx, origin, segment_end);
                if dist <= radius {
                    register(&touched, dist);
                }
                match nearest {
                    Some((_, p, fid)) => {
                        let n = scene.face(fid).rect.normal;
                        dir = dir - n * (2.0 * dir.dot(n));
                        origin = p;
                        touched.push(fid);
                    }
                    None => break,
                }
            }
        }
    }

    // Snap each discovered sequence to the exact solution; sequences the
    // image method rejects were sphere-sized false positives.
    let mut geoms: Vec<GeomPath> = candidates
        .into_iter()
        .filter_map(|(seq, _)| solve_sequence(scene, &seq, rx, cfg))
        .collect();
    geoms.sort_by(|a, b| a.faces_touched.cmp(&b.faces_touched));
    weigh_paths(geoms, scene, tx_pattern, rx_pattern, cfg)
}

/// Received power and derived figures for one beam at one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceivedPower {
    pub watts: f64,
    /// dBm after system loss; `-inf` when no power is received.
    pub dbm: f64,
    /// dBm over the configured noise power; `-inf` when no power.
    pub snr_db: f64,
    pub n_rays: usize,
}

/// `lambda^2 beta / (8 pi eta_0)`: converts the squared weighted field sum
/// into watts.
fn power_prefactor(cfg: &PropagationConfig) -> f64 {
    let lambda = cfg.wavelength_m();
    lambda * lambda * cfg.spectrum_overlap / (8.0 * PI * cfg.free_space_impedance_ohm)
}

fn watts_to_dbm_lossy(watts: f64, system_loss_db: f64) -> f64 {
    if watts <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (watts / MILLIWATT).log10() - system_loss_db
    }
}

/// Combine traced paths into received power at one receiver.
///
/// Coherent mode computes
/// `watts = prefactor * |sum_n amplitude_n * g_rx(arrival_n)|^2`; power-sum
/// mode replaces the field sum with a sum of squared magnitudes. An empty
/// path list yields 0 W and `-inf` dBm/SNR.
pub fn received_power(
    paths: &[RayPath],
    rx_pattern: &AntennaPattern,
    cfg: &PropagationConfig,
) -> ReceivedPower {
    let mut field = Complex64::new(0.0, 0.0);
    let mut power_sum = 0.0;
    for p in paths {
        let (ra, rp) = rx_pattern.gain(p.arrival_az_deg, p.arrival_el_deg);
        let contribution = p.amplitude * Complex64::from_polar(ra, rp);
        field += contribution;
        power_sum += contribution.norm_sqr();
    }
    let raw = match cfg.summation {
        SummationMode::Coherent => field.norm_sqr(),
        SummationMode::PowerSum => power_sum,
    };
    let watts = power_prefactor(cfg) * raw;
    let dbm = watts_to_dbm_lossy(watts, cfg.system_loss_db);
    ReceivedPower { watts, dbm, snr_db: snr_from_dbm(dbm, cfg.noise_power_dbm), n_rays: paths.len() }
}

/// Watts to dBm (referenced to 1 mW) minus a constant system loss.
/// Zero watts maps to `-inf`; negative power is an error.
pub fn power_to_dbm(watts: f64, system_loss_db: f64) -> Result<f64, PowerError> {
    if watts < 0.0 {
        return Err(PowerError::NegativePower(watts));
    }
    Ok(watts_to_dbm_lossy(watts, system_loss_db))
}

/// SNR in dB for a received level over a noise floor, both dBm.
/// `-inf` received power passes through as `-inf` SNR.
pub fn snr_from_dbm(power_dbm: f64, noise_power_dbm: f64) -> f64 {
    if power_dbm == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        power_dbm - noise_power_dbm
    }
}
