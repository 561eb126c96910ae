//! Scaffolding for end-to-end binary tests: writes a compact street scene
//! and run configuration into a temporary directory, spawns the `twinbeam`
//! binary there, and reads artifacts back. Each including test target
//! compiles its own copy and uses a subset of the helpers.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Absolute path of the binary under test.
pub const BIN: &str = env!("CARGO_BIN_EXE_twinbeam");

/// The knobs the tests vary. Everything else is pinned to a compact
/// street canyon that traces in well under a second.
#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub seed: u64,
    pub beams: usize,
    pub samples: usize,
    pub grid_points: usize,
    pub noise_db: f64,
    pub alphas: Vec<f64>,
    pub comm_budgets_ms: Vec<f64>,
    pub comp_budget: f64,
    pub k_max: usize,
    pub train_fraction: f64,
    pub labeling_ratio: f64,
    /// Replacement for the standard two-twin `[[twins]]` blocks.
    pub twins_toml: Option<String>,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            seed: 11,
            beams: 12,
            samples: 30,
            grid_points: 41,
            noise_db: 1.0,
            alphas: vec![0.0],
            comm_budgets_ms: vec![0.5],
            comp_budget: 1e9,
            k_max: 8,
            train_fraction: 0.5,
            labeling_ratio: 0.0,
            twins_toml: None,
        }
    }
}

/// A compact canyon: two concrete walls flanking an asphalt road, with a
/// wall-mounted transmitter at mid-block aimed across the street so the
/// steered sector sweeps along the whole trajectory.
pub fn street_scene() -> String {
    r#"schema_version = 1
map_id = "test-street"

[bounds]
min = [-15.0, -15.0, 0.0]
max = [15.0, 15.0, 25.0]

[[materials]]
name = "concrete"
reflection_magnitude = 0.7
reflection_phase_rad = 3.141592653589793

[[materials]]
name = "asphalt"
reflection_magnitude = 0.4
reflection_phase_rad = 3.141592653589793

[road]
material = "asphalt"

[[buildings]]
min = [-14.0, 4.0]
max = [14.0, 9.0]
height = 12.0
material = "concrete"

[[buildings]]
min = [-14.0, -9.0]
max = [14.0, -4.0]
height = 12.0
material = "concrete"

[tx]
position = [0.0, -3.5]
height = 3.0
facing_az_deg = 90.0
"#
    .to_string()
}

fn toml_floats(values: &[f64]) -> String {
    let inner: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    format!("[{}]", inner.join(", "))
}

fn config_toml(opts: &FixtureOptions) -> String {
    let twins = opts.twins_toml.clone().unwrap_or_else(|| {
        format!(
            r#"[[twins]]
id = 1
rho = 1
grid = {{ start = [-10.0, 0.0], end = [10.0, 0.0], points = {points}, height = 1.6 }}

[[twins]]
id = 2
rho = 2
grid = {{ start = [-10.0, 0.0], end = [10.0, 0.0], points = {points}, height = 1.6 }}
"#,
            points = opts.grid_points
        )
    });
    format!(
        r#"seed = {seed}
out_dir = "out"
scene = "street.toml"

[codebook.synthetic]
beams = {beams}

[ground_truth]
samples = {samples}
noise_db = {noise:?}

{twins}
[propagation]
max_range_m = 60.0

[selection]
alphas = {alphas}
comm_budgets_ms = {budgets}
comp_budget = {comp:?}
comm_model = "linear"
k_max = {k_max}
region_width_m = 5.0
smoothing = 0.5

[pipeline]
train_fraction = {tf:?}
confidence_scale_m = 1.0
labeling_ratio = {lr:?}
"#,
        seed = opts.seed,
        beams = opts.beams,
        samples = opts.samples,
        noise = opts.noise_db,
        twins = twins,
        alphas = toml_floats(&opts.alphas),
        budgets = toml_floats(&opts.comm_budgets_ms),
        comp = opts.comp_budget,
        k_max = opts.k_max,
        tf = opts.train_fraction,
        lr = opts.labeling_ratio,
    )
}

/// Write the scene and run configuration into `dir`; returns the config
/// path. Outputs land in `dir/out`.
pub fn write_workspace(dir: &Path, opts: &FixtureOptions) -> PathBuf {
    fs::write(dir.join("street.toml"), street_scene()).expect("write scene");
    let config = dir.join("run.toml");
    fs::write(&config, config_toml(opts)).expect("write config");
    config
}

/// Spawn the binary in `dir` and wait for it.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    run_with_env(dir, args, &[])
}

/// Spawn the binary in `dir` with extra environment variables.
pub fn run_with_env(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).current_dir(dir).env_remove("TWINBEAM_WORKERS");
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().expect("spawn twinbeam binary")
}

/// Panic with the captured stderr when the run failed.
pub fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn read_json(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text)
        .unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

pub fn read_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

/// Every artifact under `dir/out` keyed by relative path, excluding logs
/// (the only timestamped output).
pub fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let out = dir.join("out");
    let mut files = BTreeMap::new();
    let entries = fs::read_dir(&out)
        .unwrap_or_else(|e| panic!("reading {}: {e}", out.display()));
    for entry in entries {
        let entry = entry.expect("directory entry");
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".log") {
            continue;
        }
        files.insert(name, fs::read(entry.path()).expect("read artifact"));
    }
    files
}
