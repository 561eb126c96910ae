//! Antenna patterns, codebooks, and pattern-discrepancy scoring.
//!
//! Measured patterns arrive as `(azimuth, elevation, gain)` samples on a
//! uniform angular lattice whose step may not be a whole degree. Simulation
//! front ends only accept integer-degree steps, so [`load_pattern_grid`]
//! re-grids by index: the k-th sample along an axis moves to `k` times the
//! declared step, keeping the boresight sample at 0°. Gains are stored as
//! linear amplitude plus phase and queried with bilinear interpolation.
//!
//! [`pattern_discrepancy`] scores how far two equally-sized patterns moved
//! apart by turning every cell into a point on the unit sphere and
//! averaging the chord distance, which is 0 for identical patterns and 2
//! for antipodal ones.

use crate::geom::{direction_from_az_el, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AntennaError {
    /// The snapped samples do not cover every cell of their bounding grid.
    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),
    /// Two samples landed in the same snapped cell.
    #[error("duplicate cell at az index {az_index}, el index {el_index}")]
    DuplicateCell { az_index: i64, el_index: i64 },
    /// Patterns being compared have different grid dimensions.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    /// Codebooks being compared have different beam counts.
    #[error("codebook size mismatch: {a} vs {b} beams")]
    SizeMismatch { a: usize, b: usize },
    /// A sample vector with zero magnitude cannot be normalized.
    #[error("zero-norm sample at cell index {index}")]
    ZeroNormSample { index: usize },
    /// Pattern CSV or manifest could not be read or parsed.
    #[error("pattern io: {0}")]
    Io(String),
}

/// One measured pattern sample prior to gridding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSample {
    pub az_deg: f64,
    pub el_deg: f64,
    /// Linear amplitude gain (not dB); must be >= 0 and finite.
    pub amplitude: f64,
    pub phase_rad: f64,
}

/// Complex gain pattern on a uniform integer-step az/el grid.
///
/// Cells are stored row-major with elevation as the slow axis:
/// `index = el_index * n_az + az_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaPattern {
    pub az_min_deg: f64,
    pub el_min_deg: f64,
    pub az_step_deg: f64,
    pub el_step_deg: f64,
    pub n_az: usize,
    pub n_el: usize,
    /// `(amplitude, phase_rad)` per cell, amplitude >= 0.
    pub gains: Vec<(f64, f64)>,
    /// Amplitude returned for queries outside the measured range.
    #[serde(default)]
    pub floor_amplitude: f64,
}

impl AntennaPattern {
    /// Unit-gain pattern covering every direction, for ideal or omni ends.
    pub fn isotropic() -> AntennaPattern {
        AntennaPattern {
            az_min_deg: -180.0,
            el_min_deg: -90.0,
            az_step_deg: 360.0,
            el_step_deg: 180.0,
            n_az: 2,
            n_el: 2,
            gains: vec![(1.0, 0.0); 4],
            floor_amplitude: 1.0,
        }
    }

    pub fn az_max_deg(&self) -> f64 {
        self.az_min_deg + self.az_step_deg * (self.n_az as f64 - 1.0)
    }

    pub fn el_max_deg(&self) -> f64 {
        self.el_min_deg + self.el_step_deg * (self.n_el as f64 - 1.0)
    }

    /// Number of grid cells.
    pub fn len(&self) -> usize {
        self.n_az * self.n_el
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Angles of the cell at `(az_index, el_index)`.
    pub fn cell_angles(&self, az_index: usize, el_index: usize) -> (f64, f64) {
        (
            self.az_min_deg + self.az_step_deg * az_index as f64,
            self.el_min_deg + self.el_step_deg * el_index as f64,
        )
    }

    /// Complex gain `(amplitude, phase_rad)` at an arbitrary direction.
    ///
    /// Inside the measured range this bilinearly interpolates amplitude and
    /// phase between the four surrounding cells; exact grid angles return
    /// the stored values. Outside the range the configured
    /// `floor_amplitude` is returned with zero phase.
    pub fn gain(&self, az_deg: f64, el_deg: f64) -> (f64, f64) {
        let (u, in_az) = axis_coord(az_deg, self.az_min_deg, self.az_step_deg, self.n_az);
        let (v, in_el) = axis_coord(el_deg, self.el_min_deg, self.el_step_deg, self.n_el);
        if !in_az || !in_el {
            return (self.floor_amplitude, 0.0);
        }
        let (i0, fu) = split_coord(u, self.n_az);
        let (j0, fv) = split_coord(v, self.n_el);
        let i1 = (i0 + 1).min(self.n_az - 1);
        let j1 = (j0 + 1).min(self.n_el - 1);
        let at = |i: usize, j: usize| self.gains[j * self.n_az + i];
        let lerp2 = |f: fn((f64, f64)) -> f64| {
            let g00 = f(at(i0, j0));
            let g10 = f(at(i1, j0));
            let g01 = f(at(i0, j1));
            let g11 = f(at(i1, j1));
            let a = g00 + (g10 - g00) * fu;
            let b = g01 + (g11 - g01) * fu;
            a + (b - a) * fv
        };
        (lerp2(|g| g.0), lerp2(|g| g.1))
    }
}

/// Fractional grid coordinate along one axis plus an in-range flag.
fn axis_coord(value: f64, min: f64, step: f64, n: usize) -> (f64, bool) {
    if n <= 1 {
        // Degenerate axis: in range only at (approximately) the single angle.
        return (0.0, (value - min).abs() <= 1e-9);
    }
    let u = (value - min) / step;
    (u, u >= -1e-9 && u <= n as f64 - 1.0 + 1e-9)
}

/// Split a fractional coordinate into base cell index and fraction.
fn split_coord(u: f64, n: usize) -> (usize, f64) {
    let clamped = u.clamp(0.0, n as f64 - 1.0);
    let i = (clamped.floor() as usize).min(n.saturating_sub(2).max(0));
    (i, clamped - i as f64)
}

/// Re-grid measured samples onto an integer-step lattice.
///
/// Each axis must be uniformly sampled; the k-th distinct angle (counting
/// from the angle nearest a multiple of the original step) is assigned to
/// `k * step` of the declared step, so a 1.8°-step sweep of [-90°, 90°]
/// snapped to 2° spans [-100°, 100°] while the 0° sample stays at 0°.
/// Samples must tile a complete rectangle, one sample per cell.
pub fn load_pattern_grid(
    samples: &[PatternSample],
    az_step_deg: f64,
    el_step_deg: f64,
) -> Result<AntennaPattern, AntennaError> {
    if samples.is_empty() {
        return Err(AntennaError::IncompleteGrid("no samples".to_string()));
    }
    if !(az_step_deg > 0.0) || !(el_step_deg > 0.0) {
        return Err(AntennaError::IncompleteGrid("steps must be positive".to_string()));
    }
    for (i, s) in samples.iter().enumerate() {
        if !(s.amplitude >= 0.0) || !s.amplitude.is_finite() || !s.phase_rad.is_finite() {
            return Err(AntennaError::IncompleteGrid(format!(
                "sample {i}: amplitude must be finite and >= 0"
            )));
        }
    }

    let az_index = axis_indexer(samples.iter().map(|s| s.az_deg), az_step_deg);
    let el_index = axis_indexer(samples.iter().map(|s| s.el_deg), el_step_deg);

    let mut az_ids: Vec<i64> = samples.iter().map(|s| az_index(s.az_deg)).collect();
    let mut el_ids: Vec<i64> = samples.iter().map(|s| el_index(s.el_deg)).collect();
    let (az_lo, az_hi) = (*az_ids.iter().min().unwrap(), *az_ids.iter().max().unwrap());
    let (el_lo, el_hi) = (*el_ids.iter().min().unwrap(), *el_ids.iter().max().unwrap());
    let n_az = (az_hi - az_lo + 1) as usize;
    let n_el = (el_hi - el_lo + 1) as usize;
    for id in &mut az_ids {
        *id -= az_lo;
    }
    for id in &mut el_ids {
        *id -= el_lo;
    }

    let mut gains = vec![None; n_az * n_el];
    for (k, s) in samples.iter().enumerate() {
        let cell = el_ids[k] as usize * n_az + az_ids[k] as usize;
        if gains[cell].is_some() {
            return Err(AntennaError::DuplicateCell {
                az_index: az_ids[k] + az_lo,
                el_index: el_ids[k] + el_lo,
            });
        }
        gains[cell] = Some((s.amplitude, s.phase_rad));
    }
    if let Some(missing) = gains.iter().position(|g| g.is_none()) {
        return Err(AntennaError::IncompleteGrid(format!(
            "cell az index {}, el index {} has no sample",
            missing % n_az,
            missing / n_az
        )));
    }

    Ok(AntennaPattern {
        az_min_deg: (az_lo as f64) * az_step_deg,
        el_min_deg: (el_lo as f64) * el_step_deg,
        az_step_deg,
        el_step_deg,
        n_az,
        n_el,
        gains: gains.into_iter().map(|g| g.unwrap()).collect(),
        floor_amplitude: 0.0,
    })
}

/// Build the value -> lattice-index map for one axis.
///
/// With two or more distinct angles the original uniform step is inferred
/// from their span; a single distinct angle falls back to the target step.
fn axis_indexer(values: impl Iterator<Item = f64>, target_step: f64) -> impl Fn(f64) -> i64 {
    let mut distinct: Vec<f64> = values.collect();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let step = if distinct.len() >= 2 {
        (distinct[distinct.len() - 1] - distinct[0]) / (distinct.len() as f64 - 1.0)
    } else {
        target_step
    };
    move |v: f64| (v / step).round() as i64
}

/// Radius convention used when turning a pattern cell into a space vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RadiusConvention {
    /// Radius is the stored linear amplitude (always >= 0).
    #[default]
    LinearAmplitude,
    /// Radius is the gain in dB (`20 log10 amplitude`); negative-dB cells
    /// point away from their nominal direction.
    DecibelGain,
}

/// Result of a pattern comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSimilarity {
    /// Mean per-cell chord distance between unit-normalized cell vectors,
    /// in [0, 2]: 0 for identical patterns, 2 for antipodal ones.
    pub delta: f64,
    /// Number of cells that entered the mean.
    pub per_point_count: usize,
}

/// Mean vector discrepancy between two patterns of equal grid dimensions.
///
/// Every cell becomes the point at its own `(az, el)` direction with radius
/// given by the convention; both points are normalized to the unit sphere
/// before taking their chord distance, which keeps the score within [0, 2]
/// even when amplitudes differ. A zero-radius cell has no direction and is
/// reported as `ZeroNormSample`.
pub fn pattern_discrepancy(
    a: &AntennaPattern,
    b: &AntennaPattern,
) -> Result<PatternSimilarity, AntennaError> {
    pattern_discrepancy_with(a, b, RadiusConvention::default())
}

/// [`pattern_discrepancy`] under an explicit radius convention.
pub fn pattern_discrepancy_with(
    a: &AntennaPattern,
    b: &AntennaPattern,
    convention: RadiusConvention,
) -> Result<PatternSimilarity, AntennaError> {
    if a.n_az != b.n_az || a.n_el != b.n_el {
        return Err(AntennaError::GridMismatch(format!(
            "{}x{} vs {}x{} cells",
            a.n_az, a.n_el, b.n_az, b.n_el
        )));
    }
    let count = a.len();
    let mut sum = 0.0;
    for idx in 0..count {
        let ua = unit_cell_vector(a, idx, convention)
            .ok_or(AntennaError::ZeroNormSample { index: idx })?;
        let ub = unit_cell_vector(b, idx, convention)
            .ok_or(AntennaError::ZeroNormSample { index: idx })?;
        sum += (ub - ua).norm();
    }
    Ok(PatternSimilarity { delta: sum / count as f64, per_point_count: count })
}

/// Unit-normalized space vector for one pattern cell, or `None` when the
/// radius is zero.
fn unit_cell_vector(p: &AntennaPattern, idx: usize, convention: RadiusConvention) -> Option<Vec3> {
    let (az, el) = p.cell_angles(idx % p.n_az, idx / p.n_az);
    let radius = match convention {
        RadiusConvention::LinearAmplitude => p.gains[idx].0,
        RadiusConvention::DecibelGain => {
            let amp = p.gains[idx].0;
            if amp <= 0.0 {
                return None;
            }
            20.0 * amp.log10()
        }
    };
    if radius == 0.0 {
        return None;
    }
    Some(direction_from_az_el(az, el) * radius.signum())
}

/// A transmit codebook: one pattern per beam, all on identical grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub beams: Vec<AntennaPattern>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Mean of the per-beam discrepancies between two codebooks of equal size.
pub fn mean_codebook_discrepancy(a: &Codebook, b: &Codebook) -> Result<f64, AntennaError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(AntennaError::SizeMismatch { a: a.len(), b: b.len() });
    }
    let mut sum = 0.0;
    for (pa, pb) in a.beams.iter().zip(&b.beams) {
        sum += pattern_discrepancy(pa, pb)?.delta;
    }
    Ok(sum / a.len() as f64)
}

/// Read one pattern CSV (`az_deg,el_deg,gain_db`) into raw samples.
/// Gains convert from dB to linear amplitude; phases are zero.
pub fn load_pattern_csv(path: &Path) -> Result<Vec<PatternSample>, AntennaError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AntennaError::Io(format!("{}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for record in reader.deserialize::<(f64, f64, f64)>() {
        let (az_deg, el_deg, gain_db) =
            record.map_err(|e| AntennaError::Io(format!("{}: {e}", path.display())))?;
        samples.push(PatternSample {
            az_deg,
            el_deg,
            amplitude: 10f64.powf(gain_db / 20.0),
            phase_rad: 0.0,
        });
    }
    Ok(samples)
}

/// Codebook manifest: beam pattern files in beam order plus the grid steps
/// every pattern snaps to.
#[derive(Debug, Clone, Deserialize)]
pub struct CodebookManifest {
    pub az_step_deg: f64,
    pub el_step_deg: f64,
    pub beams: Vec<String>,
}

/// Load a codebook from a manifest file; pattern paths resolve relative to
/// the manifest's directory. All beams must share grid dimensions.
pub fn load_codebook_manifest(path: &Path) -> Result<Codebook, AntennaError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AntennaError::Io(format!("{}: {e}", path.display())))?;
    let manifest: CodebookManifest =
        toml::from_str(&text).map_err(|e| AntennaError::Io(format!("{}: {e}", path.display())))?;
    if manifest.beams.is_empty() {
        return Err(AntennaError::Io(format!("{}: manifest lists no beams", path.display())));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut beams = Vec::with_capacity(manifest.beams.len());
    for rel in &manifest.beams {
        let samples = load_pattern_csv(&base.join(rel))?;
        beams.push(load_pattern_grid(&samples, manifest.az_step_deg, manifest.el_step_deg)?);
    }
    for (i, b) in beams.iter().enumerate().skip(1) {
        if b.n_az != beams[0].n_az || b.n_el != beams[0].n_el {
            return Err(AntennaError::GridMismatch(format!(
                "beam {i} has {}x{} cells, beam 0 has {}x{}",
                b.n_az, b.n_el, beams[0].n_az, beams[0].n_el
            )));
        }
    }
    Ok(Codebook { beams })
}
