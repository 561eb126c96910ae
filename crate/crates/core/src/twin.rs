//! Digital twins: per-scenario beam-SNR lookup tables and their build cost.
//!
//! A twin is a world model traced at a chosen fidelity (reflection depth)
//! against a transmit codebook over a receiver grid. The result is a
//! [`LookupTable`]: for every grid point, the SNR each beam would deliver,
//! plus the ray counts that drove it. Tables carry a [`CostBreakdown`] from
//! the computation-cost model so downstream selection can trade fidelity
//! against build budget, and they persist to a checksummed binary container
//! (with a lossless CSV export for inspection).

use crate::antenna::{AntennaPattern, Codebook};
use crate::raytracer::{received_power, trace_paths_beams, PropagationConfig, Scene};
use crate::world::{RxGrid, WorldModel};
use rayon::prelude::*;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// On-disk container magic for lookup-table files.
const LT_MAGIC: &[u8; 4] = b"TWLT";
/// Current lookup-table container schema.
pub const LT_SCHEMA_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("invalid twin configuration: {0}")]
    InvalidConfig(String),
    #[error("cost factor overflows: {0}")]
    Overflow(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("lookup table schema {found} unsupported (expected {expected})")]
    SchemaVersionMismatch { found: u16, expected: u16 },
    #[error("lookup table corrupt: {0}")]
    Corrupt(String),
}

/// Everything needed to build one twin: the world, the transmit codebook,
/// the trace fidelity, and the receiver grid to tabulate.
#[derive(Debug, Clone)]
pub struct TwinConfig<'a> {
    pub twin_id: u32,
    pub scenario_id: String,
    pub world: &'a WorldModel,
    pub codebook: &'a Codebook,
    /// Reflection depth this twin is traced at. Must not exceed the
    /// capability in `prop.max_reflections`.
    pub rho: u32,
    pub prop: PropagationConfig,
    pub rx_grid: RxGrid,
}

impl TwinConfig<'_> {
    /// Check the structural invariants before generation.
    pub fn validate(&self) -> Result<(), TwinError> {
        if self.codebook.beams.is_empty() {
            return Err(TwinError::InvalidConfig("codebook has no beams".into()));
        }
        if self.rho > self.prop.max_reflections {
            return Err(TwinError::InvalidConfig(format!(
                "twin fidelity rho={} exceeds tracer capability {}",
                self.rho, self.prop.max_reflections
            )));
        }
        Ok(())
    }

    /// Propagation settings actually used for this twin's traces: the
    /// shared config clamped to the twin's own reflection depth.
    pub fn effective_prop(&self) -> PropagationConfig {
        PropagationConfig { max_reflections: self.rho, ..self.prop.clone() }
    }
}

/// SNR per beam at one receiver-grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupEntry {
    pub rx_index: u32,
    /// One SNR per codebook beam, dB; `-inf` marks a dead beam.
    pub snr_db: Vec<f32>,
    /// Rays that survived the sensitivity cut for each beam.
    pub n_rays: Vec<u16>,
}

/// Build cost of a twin in abstract cost units, with a wall-clock estimate
/// derived from a machine calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub map_cost: f64,
    pub lookup_cost: f64,
    /// Always `map_cost + lookup_cost`.
    pub total: f64,
    pub wall_clock_estimate_s: f64,
}

/// Scaling knobs that map the abstract cost model onto a concrete machine.
/// All default to 1.0, which keeps costs in pure model units.
#[derive(Debug, Clone)]
pub struct CostCalibration {
    /// Cost units per (beam x point x ray x propagation factor) term.
    pub lookup_unit_cost: f64,
    /// Cost units per scene element (road, building, obstacle).
    pub map_unit_cost: f64,
    /// Cost units a reference machine executes per second.
    pub units_per_second: f64,
}

impl Default for CostCalibration {
    fn default() -> Self {
        CostCalibration { lookup_unit_cost: 1.0, map_unit_cost: 1.0, units_per_second: 1.0 }
    }
}

/// One twin's tabulated beam SNRs over its receiver grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub twin_id: u32,
    pub scenario_id: String,
    pub n_beams: u32,
    pub entries: Vec<LookupEntry>,
    pub comp_cost: CostBreakdown,
}

/// A lookup table bound to the receiver grid it was tabulated on; the grid
/// is what maps world positions back onto table entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinTable {
    pub table: LookupTable,
    pub grid: RxGrid,
}

impl TwinTable {
    /// The entry nearest to a world position, if the grid is non-empty.
    pub fn entry_at(&self, position: crate::world::Vec3) -> Option<&LookupEntry> {
        self.grid.nearest_index(position).and_then(|i| self.table.entries.get(i))
    }
}

/// Per-ray propagation cost factor
/// `(rho + iota + 1)! / (iota! * rho!) * w^(zeta + 1)` for reflection depth
/// `rho`, transmission depth `iota`, diffraction depth `zeta`, and `w`
/// reflective surfaces reachable from the transmitter.
pub fn prop_cost_factor(rho: u32, iota: u32, zeta: u32, w: u32) -> Result<f64, TwinError> {
    let fact = |k: u32| -> Result<u128, TwinError> {
        let mut acc: u128 = 1;
        for v in 2..=k as u128 {
            acc = acc
                .checked_mul(v)
                .ok_or_else(|| TwinError::Overflow(format!("{k}! exceeds 128 bits")))?;
        }
        Ok(acc)
    };
    let numerator = fact(
        rho.checked_add(iota + 1)
            .ok_or_else(|| TwinError::Overflow("rho + iota + 1 exceeds u32".into()))?,
    )?;
    let denominator = fact(iota)? * fact(rho)?;
    let combinatorial = numerator / denominator;
    let spread = (w as u128)
        .checked_pow(zeta + 1)
        .ok_or_else(|| TwinError::Overflow(format!("{w}^{} exceeds 128 bits", zeta + 1)))?;
    let factor = combinatorial
        .checked_mul(spread)
        .ok_or_else(|| TwinError::Overflow("cost factor exceeds 128 bits".into()))?;
    Ok(factor as f64)
}

/// Count the reflective surfaces the transmitter can reach directly: sweep
/// a ray lattice at the config's angular spacing and collect the distinct
/// faces hit front-side first within range.
pub fn count_reflective_surfaces(world: &WorldModel, cfg: &PropagationConfig) -> u32 {
    let scene = Scene::compile(world);
    let tx = scene.tx_position;
    let step = cfg.ray_spacing_deg;
    let n_el = (180.0 / step).ceil() as i64;
    let n_az = (360.0 / step).ceil() as i64;
    let mut seen = vec![false; scene.faces.len()];
    for ei in 0..=n_el {
        let el = -90.0 + 180.0 * ei as f64 / n_el as f64;
        for ai in 0..n_az {
            let az = -180.0 + 360.0 * ai as f64 / n_az as f64;
            let dir = crate::geom::direction_from_az_el(az, el);
            let far = tx + dir * cfg.max_range_m;
            let mut nearest: Option<(f64, usize)> = None;
            for (k, face) in scene.faces.iter().enumerate() {
                // Only front-side hits reflect.
                if dir.dot(face.rect.normal) >= -1e-12 {
                    continue;
                }
                if let Some((t, _)) = face.rect.segment_hit(tx, far, 1e-9) {
                    if t > 1e-9 && nearest.map_or(true, |(tb, _)| t < tb) {
                        nearest = Some((t, k));
                    }
                }
            }
            if let Some((_, k)) = nearest {
                seen[k] = true;
            }
        }
    }
    seen.iter().filter(|s| **s).count() as u32
}

/// Cost of building the scene description itself: one unit per element
/// (the ground plane, each building, each obstacle).
pub fn map_cost(world: &WorldModel, calib: &CostCalibration) -> f64 {
    (1 + world.buildings.len() + world.obstacles.len()) as f64 * calib.map_unit_cost
}

/// Lookup-table build cost:
/// `B x n x mean_rays x prop_cost_factor(rho, iota, zeta, w) x unit_cost`,
/// with `w` measured by [`count_reflective_surfaces`].
pub fn lookup_cost(twin: &TwinConfig, mean_rays: f64) -> Result<f64, TwinError> {
    lookup_cost_with(twin, mean_rays, &CostCalibration::default())
}

/// [`lookup_cost`] under an explicit machine calibration.
pub fn lookup_cost_with(
    twin: &TwinConfig,
    mean_rays: f64,
    calib: &CostCalibration,
) -> Result<f64, TwinError> {
    let w = count_reflective_surfaces(twin.world, &twin.prop);
    let factor = prop_cost_factor(
        twin.rho,
        twin.prop.max_transmissions,
        twin.prop.max_diffractions,
        w,
    )?;
    let beams = twin.codebook.beams.len() as f64;
    let points = twin.rx_grid.points.len() as f64;
    Ok(beams * points * mean_rays * factor * calib.lookup_unit_cost)
}

/// Combine the two cost components under the default calibration.
pub fn total_cost(map_cost: f64, lookup: f64) -> CostBreakdown {
    total_cost_with(map_cost, lookup, &CostCalibration::default())
}

/// Combine the two cost components; the wall-clock estimate divides the
/// total by the calibration's units-per-second.
pub fn total_cost_with(map_cost: f64, lookup: f64, calib: &CostCalibration) -> CostBreakdown {
    let total = map_cost + lookup;
    CostBreakdown {
        map_cost,
        lookup_cost: lookup,
        total,
        wall_clock_estimate_s: total / calib.units_per_second,
    }
}

/// Build the twin's lookup table: trace every receiver-grid point against
/// every codebook beam and record the per-beam SNR and surviving ray count.
///
/// The receive side uses an isotropic reference antenna facing
/// `prop.rx_facing_az_deg`. Entries come out in `rx_index` order and the
/// result is bit-identical across runs and worker counts.
pub fn generate_lookup_table(twin: &TwinConfig) -> Result<LookupTable, TwinError> {
    generate_lookup_table_with(twin, &CostCalibration::default())
}

/// [`generate_lookup_table`] under an explicit machine calibration.
pub fn generate_lookup_table_with(
    twin: &TwinConfig,
    calib: &CostCalibration,
) -> Result<LookupTable, TwinError> {
    twin.validate()?;
    let prop = twin.effective_prop();
    let scene = Scene::compile(twin.world);
    let rx_pattern = AntennaPattern::isotropic();

    let entries: Vec<LookupEntry> = twin
        .rx_grid
        .points
        .par_iter()
        .enumerate()
        .map(|(j, &point)| {
            let per_beam = trace_paths_beams(&scene, &twin.codebook.beams, &rx_pattern, point, &prop);
            let mut snr_db = Vec::with_capacity(per_beam.len());
            let mut n_rays = Vec::with_capacity(per_beam.len());
            for paths in &per_beam {
                let rp = received_power(paths, &rx_pattern, &prop);
                snr_db.push(rp.snr_db as f32);
                n_rays.push(rp.n_rays.min(u16::MAX as usize) as u16);
            }
            LookupEntry { rx_index: j as u32, snr_db, n_rays }
        })
        .collect();

    let total_rays: u64 = entries.iter().flat_map(|e| e.n_rays.iter()).map(|&r| r as u64).sum();
    let cells = entries.len() * twin.codebook.beams.len();
    let mean_rays = if cells == 0 { 0.0 } else { total_rays as f64 / cells as f64 };
    let lookup = lookup_cost_with(twin, mean_rays, calib)?;
    let comp_cost = total_cost_with(map_cost(twin.world, calib), lookup, calib);

    Ok(LookupTable {
        twin_id: twin.twin_id,
        scenario_id: twin.scenario_id.clone(),
        n_beams: twin.codebook.beams.len() as u32,
        entries,
        comp_cost,
    })
}

/// Serialize a lookup table to its binary container at `path`; returns the
/// bytes written. The format is little-endian: magic, schema, ids, matrix
/// dimensions, cost fields, receiver indices, the row-major `f32` SNR
/// matrix, the row-major `u16` ray-count matrix, and a trailing CRC32 over
/// everything before it.
pub fn save_lookup_table(lt: &LookupTable, path: &Path) -> Result<u64, TwinError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(LT_MAGIC);
    buf.extend_from_slice(&LT_SCHEMA_VERSION.to_le_bytes());
    buf.extend_from_slice(&lt.twin_id.to_le_bytes());
    let sid = lt.scenario_id.as_bytes();
    if sid.len() > u16::MAX as usize {
        return Err(TwinError::InvalidConfig("scenario id longer than 65535 bytes".into()));
    }
    buf.extend_from_slice(&(sid.len() as u16).to_le_bytes());
    buf.extend_from_slice(sid);
    buf.extend_from_slice(&lt.n_beams.to_le_bytes());
    buf.extend_from_slice(&(lt.entries.len() as u32).to_le_bytes());
    for cost in [
        lt.comp_cost.map_cost,
        lt.comp_cost.lookup_cost,
        lt.comp_cost.total,
        lt.comp_cost.wall_clock_estimate_s,
    ] {
        buf.extend_from_slice(&cost.to_le_bytes());
    }
    for entry in &lt.entries {
        if entry.snr_db.len() != lt.n_beams as usize || entry.n_rays.len() != lt.n_beams as usize {
            return Err(TwinError::InvalidConfig(format!(
                "entry {} has {} SNRs / {} ray counts for {} beams",
                entry.rx_index,
                entry.snr_db.len(),
                entry.n_rays.len(),
                lt.n_beams
            )));
        }
        buf.extend_from_slice(&entry.rx_index.to_le_bytes());
    }
    for entry in &lt.entries {
        for &snr in &entry.snr_db {
            buf.extend_from_slice(&snr.to_le_bytes());
        }
    }
    for entry in &lt.entries {
        for &rays in &entry.n_rays {
            buf.extend_from_slice(&rays.to_le_bytes());
        }
    }
    buf.extend_from_slice(&crc32fast::hash(&buf).to_le_bytes());

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Read back a container written by [`save_lookup_table`]. The result is
/// bit-exact: `load(save(lt)) == lt`.
pub fn load_lookup_table(path: &Path) -> Result<LookupTable, TwinError> {
    let buf = fs::read(path)?;
    let mut cursor = Reader { buf: &buf, pos: 0 };

    if cursor.take(4)? != LT_MAGIC {
        return Err(TwinError::Corrupt("bad magic".into()));
    }
    let schema = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
    if schema != LT_SCHEMA_VERSION {
        return Err(TwinError::SchemaVersionMismatch { found: schema, expected: LT_SCHEMA_VERSION });
    }
    let twin_id = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    let sid_len = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()) as usize;
    let scenario_id = String::from_utf8(cursor.take(sid_len)?.to_vec())
        .map_err(|_| TwinError::Corrupt("scenario id is not UTF-8".into()))?;
    let n_beams = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    let n_entries = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    let mut costs = [0.0f64; 4];
    for cost in &mut costs {
        *cost = f64::from_le_bytes(cursor.take(8)?.try_into().unwrap());
    }

    let b = n_beams as usize;
    let n = n_entries as usize;
    let mut rx_indices = Vec::with_capacity(n);
    for _ in 0..n {
        rx_indices.push(u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
    }
    let mut snr = Vec::with_capacity(n * b);
    for _ in 0..n * b {
        snr.push(f32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
    }
    let mut rays = Vec::with_capacity(n * b);
    for _ in 0..n * b {
        rays.push(u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()));
    }

    let payload_end = cursor.pos;
    let stored = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    if cursor.pos != buf.len() {
        return Err(TwinError::Corrupt(format!("{} trailing bytes", buf.len() - cursor.pos)));
    }
    if crc32fast::hash(&buf[..payload_end]) != stored {
        return Err(TwinError::Corrupt("checksum mismatch".into()));
    }

    let entries = rx_indices
        .into_iter()
        .enumerate()
        .map(|(j, rx_index)| LookupEntry {
            rx_index,
            snr_db: snr[j * b..(j + 1) * b].to_vec(),
            n_rays: rays[j * b..(j + 1) * b].to_vec(),
        })
        .collect();

    Ok(LookupTable {
        twin_id,
        scenario_id,
        n_beams,
        entries,
        comp_cost: CostBreakdown {
            map_cost: costs[0],
            lookup_cost: costs[1],
            total: costs[2],
            wall_clock_estimate_s: costs[3],
        },
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TwinError> {
        if self.pos + n > self.buf.len() {
            return Err(TwinError::Corrupt(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// Lossless CSV view of a table: `rx_index,beam,snr_db,n_rays` rows.
pub fn export_lookup_csv(lt: &LookupTable, path: &Path) -> Result<(), TwinError> {
    let mut out = String::from("rx_index,beam,snr_db,n_rays\n");
    for entry in &lt.entries {
        for (m, (&snr, &rays)) in entry.snr_db.iter().zip(&entry.n_rays).enumerate() {
            out.push_str(&format!("{},{},{},{}\n", entry.rx_index, m, snr, rays));
        }
    }
    fs::write(path, out)?;
    Ok(())
}
