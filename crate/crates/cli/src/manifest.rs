//! Provenance manifests: every command records the files it read (path and
//! SHA-256) and the artifacts it wrote, so a run can be audited and
//! reproduced. Manifests carry no timestamps; those go to `run.log`.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::Fault;

/// One input file, identified by the path the run used and its content hash.
#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Ordered, deduplicated set of input files.
#[derive(Debug, Default)]
pub struct InputSet {
    records: Vec<InputRecord>,
}

impl InputSet {
    /// Hash and record a file; repeated paths are recorded once.
    pub fn add(&mut self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        if self.records.iter().any(|r| r.path == display) {
            return Ok(());
        }
        let bytes = fs::read(path)
            .context(Fault::Config)
            .with_context(|| format!("reading input {display}"))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.records.push(InputRecord { path: display, sha256: format!("{:x}", hasher.finalize()) });
        Ok(())
    }

    pub fn into_records(self) -> Vec<InputRecord> {
        self.records
    }
}

/// Cost breakdown and shape of one traced lookup table.
#[derive(Debug, Clone, Serialize)]
pub struct TwinBuildRecord {
    pub twin_id: u32,
    pub scenario_id: String,
    pub reflection_depth: u32,
    pub n_beams: u32,
    pub n_points: usize,
    pub file: String,
    pub bytes: u64,
    pub map_cost: f64,
    pub lookup_cost: f64,
    pub total_cost: f64,
    pub wall_clock_estimate_s: f64,
}

/// Manifest written by `trace`: inputs, per-twin cost breakdowns, outputs.
#[derive(Debug, Serialize)]
pub struct TraceManifest {
    pub command: String,
    pub seed: u64,
    pub scenario_id: String,
    pub inputs: Vec<InputRecord>,
    pub twins: Vec<TwinBuildRecord>,
    pub outputs: Vec<String>,
}

/// Manifest written by the remaining commands: inputs, outputs, and a flat
/// map of summary statistics.
#[derive(Debug, Serialize)]
pub struct CommandManifest {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub stats: BTreeMap<String, serde_json::Value>,
}

/// Serialize pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing json")?;
    text.push('\n');
    fs::write(path, text)
        .context(Fault::Artifact)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Serialize one compact JSON document per line.
pub fn write_jsonl<T: Serialize>(values: &[T], path: &Path) -> Result<()> {
    let mut text = String::new();
    for value in values {
        text.push_str(&serde_json::to_string(value).context("serializing json line")?);
        text.push('\n');
    }
    fs::write(path, text)
        .context(Fault::Artifact)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Append a timestamped line to the run's sidecar log. The log is the only
/// output that may differ between identically seeded runs; failures to
/// write it never fail the command.
pub fn log_line(out_dir: &Path, message: &str) {
    use std::io::Write as _;
    let epoch_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    if let Ok(mut file) =
        fs::OpenOptions::new().create(true).append(true).open(out_dir.join("run.log"))
    {
        let _ = writeln!(file, "{epoch_ms} {message}");
    }
}
