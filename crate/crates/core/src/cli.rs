//! Scenario runner and artifact verifier behind the `sim` binary.
//!
//! `run` writes a self-describing artifact directory; `verify` re-checks the
//! stored numbers against the physical invariants and the manifest hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Scenario, SchemaError, SCHEMA_VERSION};
use crate::error::Error;
use crate::evolution::{continuity_residual, evolve, step, step_count, EvolutionLog, EvolveOptions, Hamiltonian};
use crate::grid::Grid;
use crate::io::{load_ensemble, load_wavefunction, write_ensemble, write_wavefunction, write_wavefunction_csv, FORMAT_VERSION};
use crate::measurement::{
    apply_ideal_measurement, born_reference, collapse, collapse_equivalence, expectation, outcome_probabilities,
    premeasurement_state, readout_frequencies, HorizonOptions, MeasurementReport, MeasurementSetup,
};
use crate::projection::{expected_particle_count, particle_density, ParticleLayout};
use crate::spin::{spin_frequencies, spin_premeasurement, spin_probabilities, spin_reference, stern_gerlach_measure, SpinReport, SpinSetup};
use crate::wavefunction::{Region, Wavefunction};
use crate::worlds::{advance_worlds, equivariance_distance, sample_worlds_on, AdvanceOptions, WorldEnsemble};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const EVOLUTION_LOG: &str = "evolution_log.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const WORLDS_REPORT: &str = "worlds.json";
pub const WORLDS_INITIAL: &str = "worlds/initial.bin";
pub const WORLDS_FINAL: &str = "worlds/final.bin";
pub const MEASUREMENT_REPORT: &str = "measurement.json";
pub const MEASUREMENT_WORLDS: &str = "worlds/measurement.bin";
pub const SPIN_REPORT: &str = "spin.json";
pub const SPIN_WORLDS: &str = "worlds/spin.bin";
pub const PROJECTION_DENSITY: &str = "projection.csv";
pub const PROJECTION_REPORT: &str = "projection.json";

/// Relative drift of the logged norm.
pub const NORM_TOLERANCE: f64 = 1e-10;
/// Volume route vs coefficient route for outcome probabilities.
pub const BORN_TOLERANCE: f64 = 1e-8;
pub const EXPECTATION_TOLERANCE: f64 = 1e-10;
pub const COLLAPSE_TOLERANCE: f64 = 1e-6;
/// Stored value vs the same quantity recomputed from stored inputs.
pub const RECOMPUTE_TOLERANCE: f64 = 1e-12;
/// Recomputed continuity summaries, relative to the largest logged summary.
pub const CONTINUITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error at {0}")]
    Schema(SchemaError),
    #[error(transparent)]
    Runtime(#[from] Error),
    #[error("artifact error: {0}")]
    Artifact(String),
}

impl CliError {
    /// Process exit code: 2 for schema errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema(_) => 2,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.into())
    }
}

fn artifact(msg: impl Into<String>) -> CliError {
    CliError::Artifact(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub schema_version: u32,
    pub scenario: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub created_unix: u64,
    /// Relative path to SHA-256 of every artifact except the manifest.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a scenario needs, built and validated before any output is written.
struct Prepared {
    main: Option<MainStage>,
    measurement: Option<(MeasurementSetup, Option<Hamiltonian>)>,
    spin: Option<SpinSetup>,
}

struct MainStage {
    grid: Grid,
    masses: Vec<f64>,
    psi0: Wavefunction,
    hamiltonian: Option<Hamiltonian>,
    projection: Option<(ParticleLayout, Vec<Region>)>,
}

fn at<T>(path: &str, r: crate::Result<T>) -> Result<T, SchemaError> {
    r.map_err(|e| SchemaError { path: path.into(), message: e.to_string() })
}

fn prepare(s: &Scenario) -> Result<Prepared, SchemaError> {
    let main = match (&s.grid, &s.initial_state) {
        (Some(grid_spec), Some(state)) => {
            let grid = at("grid", grid_spec.build())?;
            let masses = s.masses.clone().unwrap_or_else(|| vec![1.0; grid.dims()]);
            let psi0 = at("initial_state", state.build(&grid, s.hbar).and_then(|p| p.normalized()))?;
            let hamiltonian = match &s.hamiltonian {
                Some(h) => Some(at("hamiltonian", h.build(&grid, &masses, s.hbar))?),
                None => None,
            };
            if let Some(e) = &s.evolution {
                at("evolution.dt", step_count(e.t_final, e.dt))?;
            }
            let projection = match &s.projection {
                Some(p) => {
                    let layout = at("projection.layout", p.layout())?;
                    let physical = at("projection.layout", layout.physical_grid(&grid))?;
                    let mut regions = Vec::new();
                    for (i, bounds) in p.regions.iter().enumerate() {
                        if bounds.len() != physical.dims() {
                            return Err(SchemaError {
                                path: format!("projection.regions[{i}]"),
                                message: format!("expected {} intervals", physical.dims()),
                            });
                        }
                        let b = bounds.clone();
                        regions.push(Region::from_predicate(&physical, move |x| {
                            x.iter().zip(&b).all(|(v, (lo, hi))| lo <= v && v < hi)
                        }));
                    }
                    Some((layout, regions))
                }
                None => None,
            };
            Some(MainStage { grid, masses, psi0, hamiltonian, projection })
        }
        _ => None,
    };
    let measurement = match &s.measurement {
        Some(m) => {
            let setup = at("measurement", m.build(s.hbar))?;
            let h = match &m.collapse {
                Some(c) => {
                    let grid = at("measurement", setup.product_grid())?;
                    at("measurement.collapse.dt", step_count(c.horizon, c.dt))?;
                    Some(at("measurement.collapse.hamiltonian", c.hamiltonian.build(&grid, &c.masses, s.hbar))?)
                }
                None => None,
            };
            Some((setup, h))
        }
        None => None,
    };
    let spin = match &s.spin {
        Some(sp) => Some(at("spin", sp.build(s.hbar))?),
        None => None,
    };
    Ok(Prepared { main, measurement, spin })
}

/// Collects artifact files and their hashes.
struct Artifacts {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn put_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.put(rel, &buf)
    }

    fn put_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(rel, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldsReport {
    pub count: usize,
    pub seed: u64,
    pub dims: usize,
    pub alive: usize,
    pub t_initial: f64,
    pub t_final: f64,
    pub bins: Option<usize>,
    pub tv_initial: Option<f64>,
    pub tv_final: Option<f64>,
    pub frozen: usize,
    pub ordering_violations: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCount {
    pub bounds: Vec<(f64, f64)>,
    pub expected_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub time: f64,
    pub particles: usize,
    pub axes: usize,
    /// Integral of the particle density over the physical box.
    pub total: f64,
    pub regions: Vec<RegionCount>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: PathBuf,
    pub files: usize,
    /// Human-readable result lines.
    pub lines: Vec<String>,
}

fn snapshot_name(k: usize) -> String {
    format!("{SNAPSHOT_DIR}/{k:05}.bin")
}

/// Runs every stage of the scenario in `config` and writes the artifact tree
/// into `output`, which must be absent or empty.
pub fn run(config: &Path, output: &Path) -> Result<RunSummary, CliError> {
    let (scenario, config_bytes) = Scenario::from_file(config).map_err(CliError::Schema)?;
    let prepared = prepare(&scenario).map_err(CliError::Schema)?;
    if output.exists() {
        if fs::read_dir(output)?.next().is_some() {
            return Err(artifact(format!("output directory {} is not empty", output.display())));
        }
    } else {
        fs::create_dir_all(output)?;
    }
    log::info!("running scenario {:?} into {}", scenario.name, output.display());
    let mut out = Artifacts { root: output.to_path_buf(), files: BTreeMap::new() };
    let mut lines = Vec::new();
    out.put(CONFIG, &config_bytes)?;
    let seed = scenario.seed.unwrap_or(0);

    if let Some(main) = &prepared.main {
        let snapshots = match (&scenario.evolution, &main.hamiltonian) {
            (Some(e), Some(h)) => {
                let options = EvolveOptions { snapshot_every: e.snapshot_every, edge_mass_abort: e.edge_mass_abort };
                let evo = evolve(&main.psi0, h, e.t_final, e.dt, options)?;
                out.put_with(EVOLUTION_LOG, |w| evo.log.write_csv(w))?;
                if scenario.outputs.snapshots {
                    for (k, snap) in evo.snapshots.iter().enumerate() {
                        out.put_with(&snapshot_name(k), |w| write_wavefunction(w, snap))?;
                    }
                }
                let norms = evo.log.norms();
                let drift = norms.iter().map(|n| (n / norms[0] - 1.0).abs()).fold(0.0, f64::max);
                lines.push(format!("evolution: {} snapshots, max relative norm drift {drift:.3e}", evo.snapshots.len()));
                evo.snapshots
            }
            _ => vec![main.psi0.clone()],
        };
        let last = snapshots.last().unwrap();
        if scenario.outputs.csv_snapshots {
            out.put_with("initial.csv", |w| write_wavefunction_csv(w, &main.psi0))?;
            out.put_with("final.csv", |w| write_wavefunction_csv(w, last))?;
        }
        if let Some(ws) = &scenario.worlds {
            let initial = sample_worlds_on(&main.psi0, ws.count, seed, "worlds")?;
            let options = AdvanceOptions { dt_world: ws.dt_world, record_every: ws.record_every };
            let adv = advance_worlds(&initial, &snapshots, &main.masses, scenario.hbar, options)?;
            out.put_with(WORLDS_INITIAL, |w| write_ensemble(w, &initial))?;
            out.put_with(WORLDS_FINAL, |w| write_ensemble(w, &adv.ensemble))?;
            if scenario.outputs.trajectories {
                out.put_with(TRAJECTORIES, |w| adv.record.write_csv(w))?;
            }
            let (tv_initial, tv_final) = match ws.bins {
                Some(b) => (
                    Some(equivariance_distance(&initial, &main.psi0, b)?),
                    Some(equivariance_distance(&adv.ensemble, last, b)?),
                ),
                None => (None, None),
            };
            let report = WorldsReport {
                count: ws.count,
                seed,
                dims: main.grid.dims(),
                alive: adv.ensemble.alive_count(),
                t_initial: initial.time(),
                t_final: adv.ensemble.time(),
                bins: ws.bins,
                tv_initial,
                tv_final,
                frozen: adv.stats.frozen,
                ordering_violations: adv.stats.ordering_violations,
                steps: adv.stats.steps,
            };
            out.put_json(WORLDS_REPORT, &report)?;
            let tv = match (tv_initial, tv_final) {
                (Some(a), Some(b)) => format!(", TV {a:.4} -> {b:.4}"),
                _ => String::new(),
            };
            lines.push(format!(
                "worlds: {} transported, {} frozen, {} ordering violations{tv}",
                ws.count, report.frozen, report.ordering_violations
            ));
        }
        if let Some((layout, regions)) = &main.projection {
            let density = particle_density(last, layout)?;
            out.put_with(PROJECTION_DENSITY, |w| density.write_csv(w))?;
            let total = density.density.iter().sum::<f64>() * density.grid.cell_volume();
            let bounds = &scenario.projection.as_ref().unwrap().regions;
            let regions = regions
                .iter()
                .zip(bounds)
                .map(|(r, b)| Ok(RegionCount { bounds: b.clone(), expected_count: expected_particle_count(last, r, layout)? }))
                .collect::<crate::Result<Vec<_>>>()?;
            let report = ProjectionReport { time: last.time(), particles: layout.particles(), axes: layout.axes(), total, regions };
            for r in &report.regions {
                lines.push(format!("projection: expected count in {:?} = {:.6}", r.bounds, r.expected_count));
            }
            out.put_json(PROJECTION_REPORT, &report)?;
        }
    }

    if let Some((setup, h)) = &prepared.measurement {
        let spec = scenario.measurement.as_ref().unwrap();
        let post = apply_ideal_measurement(&premeasurement_state(setup)?, setup)?;
        let outcome = outcome_probabilities(&post, setup)?;
        let frequencies = match spec.worlds {
            Some(m) => {
                let e = sample_worlds_on(&post, m, seed, "measurement")?;
                out.put_with(MEASUREMENT_WORLDS, |w| write_ensemble(w, &e))?;
                Some(readout_frequencies(&e, setup)?)
            }
            None => None,
        };
        let equivalence = match (&spec.collapse, h) {
            (Some(c), Some(h)) => {
                let collapsed = collapse(&post, setup, c.branch)?;
                let worlds = sample_worlds_on(&collapsed, c.worlds, seed, "collapse")?;
                let options = HorizonOptions { horizon: c.horizon, dt: c.dt, snapshot_every: c.snapshot_every, dt_world: None };
                Some(collapse_equivalence(&post, setup, c.branch, &worlds, h, options)?)
            }
            _ => None,
        };
        let report = MeasurementReport::new(setup, &outcome, frequencies.as_ref(), equivalence)?;
        lines.push(format!("measurement: P(volume) = {:?}, P(Born) = {:?}", report.probabilities_volume, report.probabilities_born));
        if let Some(f) = &report.empirical_frequencies {
            lines.push(format!("measurement: empirical frequencies {f:?}"));
        }
        if let Some(c) = &report.collapse {
            lines.push(format!("measurement: collapse divergence {:.3e} over {} worlds", c.max_divergence, c.worlds));
        }
        out.put_json(MEASUREMENT_REPORT, &report)?;
    }

    if let Some(setup) = &prepared.spin {
        let spec = scenario.spin.as_ref().unwrap();
        let post = stern_gerlach_measure(&spin_premeasurement(setup)?, setup)?;
        let p = spin_probabilities(&post, setup)?;
        let frequencies = match spec.worlds {
            Some(m) => {
                let e = sample_worlds_on(&post, m, seed, "spin")?;
                out.put_with(SPIN_WORLDS, |w| write_ensemble(w, &e))?;
                Some(spin_frequencies(&e, setup)?)
            }
            None => None,
        };
        let report = SpinReport::new(setup, p, frequencies, spec.worlds)?;
        lines.push(format!("spin: P(up, down) = ({:.10}, {:.10})", p.up, p.down));
        if let Some((u, d)) = frequencies {
            lines.push(format!("spin: empirical frequencies ({u:.4}, {d:.4})"));
        }
        out.put_json(SPIN_REPORT, &report)?;
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        format_version: FORMAT_VERSION,
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        config_sha256: sha256_hex(&config_bytes),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        files: out.files.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(output.join(MANIFEST), bytes)?;
    Ok(RunSummary { output: output.to_path_buf(), files: out.files.len(), lines })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    /// Records `value <= limit`.
    fn bound(&mut self, name: &str, what: &str, value: f64, limit: f64) {
        self.check(name, value <= limit, format!("{what} {value:.3e} (limit {limit:.1e})"));
    }
}

fn read(dir: &Path, rel: &str) -> Result<Vec<u8>, CliError> {
    fs::read(dir.join(rel)).map_err(|e| artifact(format!("{rel}: {e}")))
}

fn read_json(dir: &Path, rel: &str) -> Result<Value, CliError> {
    serde_json::from_slice(&read(dir, rel)?).map_err(|e| artifact(format!("{rel}: {e}")))
}

fn json_f64(v: &Value, pointer: &str, file: &str) -> Result<f64, CliError> {
    v.pointer(pointer)
        .and_then(Value::as_f64)
        .ok_or_else(|| artifact(format!("{file}: missing number at {pointer}")))
}

fn json_f64s(v: &Value, pointer: &str, file: &str) -> Result<Vec<f64>, CliError> {
    v.pointer(pointer)
        .and_then(Value::as_array)
        .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
        .ok_or_else(|| artifact(format!("{file}: missing number list at {pointer}")))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn load(dir: &Path, rel: &str) -> Result<Wavefunction, CliError> {
    load_wavefunction(&dir.join(rel)).map_err(|e| artifact(format!("{rel}: {e}")))
}

fn load_worlds(dir: &Path, rel: &str) -> Result<WorldEnsemble, CliError> {
    load_ensemble(&dir.join(rel)).map_err(|e| artifact(format!("{rel}: {e}")))
}

/// Re-checks the invariants of a run directory. Missing or unreadable
/// artifacts are errors; violated invariants are failed checks.
pub fn verify(dir: &Path) -> Result<VerifyReport, CliError> {
    if !dir.is_dir() {
        return Err(artifact(format!("{} is not a directory", dir.display())));
    }
    if fs::read_dir(dir)?.next().is_none() {
        return Err(artifact(format!("{} is empty", dir.display())));
    }
    if !dir.join(MANIFEST).is_file() {
        return Err(artifact(format!("{MANIFEST} not found in {}", dir.display())));
    }
    let manifest: Manifest = serde_json::from_slice(&read(dir, MANIFEST)?).map_err(|e| artifact(format!("{MANIFEST}: {e}")))?;
    let config_bytes = read(dir, CONFIG)?;
    let text = std::str::from_utf8(&config_bytes).map_err(|e| artifact(format!("{CONFIG}: {e}")))?;
    let scenario = Scenario::from_json(text).map_err(|e| artifact(format!("{CONFIG}: {e}")))?;
    let prepared = prepare(&scenario).map_err(|e| artifact(format!("{CONFIG}: {e}")))?;
    let mut report = VerifyReport::default();

    if let Some(main) = &prepared.main {
        verify_main(dir, &scenario, main, &mut report)?;
    }
    if let Some((setup, _)) = &prepared.measurement {
        verify_measurement(dir, &scenario, setup, &mut report)?;
    }
    if let Some(setup) = &prepared.spin {
        verify_spin(dir, &scenario, setup, &mut report)?;
    }

    let mut bad = Vec::new();
    if sha256_hex(&config_bytes) != manifest.config_sha256 {
        bad.push(format!("{CONFIG} (config hash)"));
    }
    for (rel, hash) in &manifest.files {
        match fs::read(dir.join(rel)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => {}
            Ok(_) => bad.push(format!("{rel} (hash mismatch)")),
            Err(_) => bad.push(format!("{rel} (missing)")),
        }
    }
    let detail = if bad.is_empty() { format!("{} files match the manifest", manifest.files.len()) } else { bad.join(", ") };
    report.check("artifact_integrity", bad.is_empty(), detail);
    Ok(report)
}

fn verify_main(dir: &Path, scenario: &Scenario, main: &MainStage, report: &mut VerifyReport) -> Result<(), CliError> {
    let mut last_psi = None;
    if let (Some(e), Some(h)) = (&scenario.evolution, &main.hamiltonian) {
        let log = EvolutionLog::read_csv(&read(dir, EVOLUTION_LOG)?[..]).map_err(|err| artifact(format!("{EVOLUTION_LOG}: {err}")))?;
        if log.rows.is_empty() {
            return Err(artifact(format!("{EVOLUTION_LOG} has no rows")));
        }
        let norms = log.norms();
        let drift = norms.iter().map(|n| (n - 1.0).abs()).fold(0.0, f64::max);
        report.bound("norm_conservation", "max |norm - 1|", drift, NORM_TOLERANCE);

        let steps = step_count(e.t_final, e.dt)?;
        let mut expected: Vec<usize> = (0..=steps).filter(|i| i % e.snapshot_every == 0).collect();
        if *expected.last().unwrap() != steps {
            expected.push(steps);
        }
        let times_ok = expected.len() == log.rows.len()
            && expected.iter().zip(&log.rows).all(|(&i, r)| (r.time - i as f64 * e.dt).abs() <= 1e-9 * e.t_final.max(1.0));
        report.check("log_schedule", times_ok, format!("{} rows, {} expected", log.rows.len(), expected.len()));

        let summaries_ok = log.rows[0].continuity_summary == 0.0
            && log.rows.iter().all(|r| r.continuity_summary.is_finite() && r.continuity_summary >= 0.0);
        if scenario.outputs.snapshots && times_ok {
            let snaps = (0..log.rows.len()).map(|k| load(dir, &snapshot_name(k))).collect::<Result<Vec<_>, _>>()?;
            let mut worst = 0.0f64;
            let mut consistent = snaps[0].values() == main.psi0.values();
            for (snap, row) in snaps.iter().zip(&log.rows) {
                consistent &= snap.grid() == &main.grid && snap.time() == row.time;
                worst = worst.max((snap.norm() - row.norm).abs());
            }
            report.check(
                "snapshot_consistency",
                consistent && worst <= RECOMPUTE_TOLERANCE,
                format!("max |snapshot norm - logged norm| {worst:.3e}"),
            );
            let scale = log.rows.iter().map(|r| r.continuity_summary).fold(f64::MIN_POSITIVE, f64::max);
            let mut rel = 0.0f64;
            for (snap, row) in snaps.iter().zip(&log.rows).skip(1) {
                let before = step(snap, h, -e.dt)?;
                let summary = continuity_residual(&before, snap, h, e.dt)?.summary;
                rel = rel.max((summary - row.continuity_summary).abs() / scale);
            }
            report.check(
                "continuity_summary",
                summaries_ok && rel <= CONTINUITY_TOLERANCE,
                format!("max deviation of recomputed summaries {rel:.3e} (relative to the largest)"),
            );
            last_psi = snaps.into_iter().last();
        } else {
            report.check("continuity_summary", summaries_ok, "summaries finite and non-negative");
        }
    } else {
        last_psi = Some(main.psi0.clone());
    }

    if let Some(ws) = &scenario.worlds {
        let stored: WorldsReport =
            serde_json::from_slice(&read(dir, WORLDS_REPORT)?).map_err(|e| artifact(format!("{WORLDS_REPORT}: {e}")))?;
        let initial = load_worlds(dir, WORLDS_INITIAL)?;
        let fin = load_worlds(dir, WORLDS_FINAL)?;
        let consistent = initial.len() == ws.count
            && fin.len() == ws.count
            && initial.seed() == scenario.seed.unwrap_or(0)
            && initial.ids() == fin.ids()
            && fin.alive_count() == stored.alive
            && fin.time() == stored.t_final;
        report.check("ensemble_consistency", consistent, format!("{} worlds, {} alive", fin.len(), fin.alive_count()));

        if stored.dims == 1 {
            let mut violations = stored.ordering_violations;
            if scenario.outputs.trajectories {
                violations += trajectory_ordering_violations(&read(dir, TRAJECTORIES)?)?;
            }
            report.check("world_ordering", violations == 0, format!("{violations} ordering violations"));
        }

        if let Some(bins) = ws.bins {
            let tv0 = equivariance_distance(&initial, &main.psi0, bins)?;
            let mut dev = (tv0 - stored.tv_initial.unwrap_or(f64::NAN)).abs();
            let mut detail = format!("TV(t0) {tv0:.4}");
            if let (Some(psi), Some(tv_final)) = (&last_psi, stored.tv_final) {
                if scenario.evolution.is_none() || scenario.outputs.snapshots {
                    let tv1 = equivariance_distance(&fin, psi, bins)?;
                    dev = dev.max((tv1 - tv_final).abs());
                    detail.push_str(&format!(", TV(T) {tv1:.4}"));
                }
            }
            report.check("equivariance_report", dev <= RECOMPUTE_TOLERANCE, detail);
            if let (Some(limit), Some(tv)) = (ws.tv_tolerance, stored.tv_final) {
                report.bound("equivariance", "final TV distance", tv, limit);
            }
        }
    }

    if let Some((layout, regions)) = &main.projection {
        let stored: ProjectionReport =
            serde_json::from_slice(&read(dir, PROJECTION_REPORT)?).map_err(|e| artifact(format!("{PROJECTION_REPORT}: {e}")))?;
        let expected = layout.particles() as f64;
        report.bound("projection_normalization", "|total density - particle count|", (stored.total - expected).abs(), BORN_TOLERANCE);
        let csv_density = read_last_column(&read(dir, PROJECTION_DENSITY)?, PROJECTION_DENSITY)?;
        if let Some(psi) = last_psi.as_ref().filter(|_| scenario.evolution.is_none() || scenario.outputs.snapshots) {
            let density = particle_density(psi, layout)?;
            let mut dev = max_abs_diff(&density.density, &csv_density);
            for (r, s) in regions.iter().zip(&stored.regions) {
                dev = dev.max((expected_particle_count(psi, r, layout)? - s.expected_count).abs());
            }
            report.check("projection_consistency", dev <= RECOMPUTE_TOLERANCE, format!("max deviation {dev:.3e}"));
        }
    }
    Ok(())
}

/// Counts adjacent alive worlds out of their initial order at each recorded time.
fn trajectory_ordering_violations(bytes: &[u8]) -> Result<usize, CliError> {
    let bad = |e: String| artifact(format!("{TRAJECTORIES}: {e}"));
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() != 5 {
        return Err(bad("expected a one-dimensional trajectory file".into()));
    }
    // time index -> (id, unwrapped position, alive)
    let mut by_time: BTreeMap<usize, Vec<(u64, f64, bool)>> = BTreeMap::new();
    let mut current_id = None;
    let mut k = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id: u64 = rec[0].parse().map_err(|_| bad(format!("bad id {:?}", &rec[0])))?;
        let u: f64 = rec[4].parse().map_err(|_| bad(format!("bad position {:?}", &rec[4])))?;
        if current_id != Some(id) {
            current_id = Some(id);
            k = 0;
        }
        by_time.entry(k).or_default().push((id, u, &rec[3] == "1"));
        k += 1;
    }
    let Some(first) = by_time.get(&0) else { return Ok(0) };
    let mut order: Vec<usize> = (0..first.len()).collect();
    order.sort_by(|&a, &b| first[a].1.total_cmp(&first[b].1));
    let mut violations = 0;
    for rows in by_time.values() {
        if rows.len() != first.len() {
            return Err(bad("ragged trajectory table".into()));
        }
        let mut last: Option<f64> = None;
        for &i in &order {
            let (_, u, alive) = rows[i];
            if !alive {
                continue;
            }
            if last.is_some_and(|p| u <= p) {
                violations += 1;
            }
            last = Some(u);
        }
    }
    Ok(violations)
}

fn read_last_column(bytes: &[u8], file: &str) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::Reader::from_reader(bytes);
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| artifact(format!("{file}: {e}")))?;
            r.iter()
                .next_back()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| artifact(format!("{file}: bad row")))
        })
        .collect()
}

fn verify_measurement(dir: &Path, scenario: &Scenario, setup: &MeasurementSetup, report: &mut VerifyReport) -> Result<(), CliError> {
    let spec = scenario.measurement.as_ref().unwrap();
    let json = read_json(dir, MEASUREMENT_REPORT)?;
    let file = MEASUREMENT_REPORT;
    let volume = json_f64s(&json, "/probabilities_volume", file)?;
    let born = json_f64s(&json, "/probabilities_born", file)?;
    report.bound("born_identity", "max |P_volume - P_born|", max_abs_diff(&volume, &born), BORN_TOLERANCE);
    let reference = born_reference(setup)?;
    report.bound("born_reference", "max |stored - recomputed Born|", max_abs_diff(&born, &reference), RECOMPUTE_TOLERANCE);

    let e_born = json_f64(&json, "/expectation/born", file)?;
    let e_op = json_f64(&json, "/expectation/operator", file)?;
    let recomputed = expectation(setup)?;
    let dev = (e_born - recomputed.born).abs().max((e_op - recomputed.operator).abs());
    report.check(
        "expectation_consistency",
        (e_born - e_op).abs() <= EXPECTATION_TOLERANCE && dev <= RECOMPUTE_TOLERANCE,
        format!("|sum p_i a_i - <A>| {:.3e}", (e_born - e_op).abs()),
    );

    if spec.worlds.is_some() {
        let stored = json_f64s(&json, "/empirical_frequencies", file)?;
        let e = load_worlds(dir, MEASUREMENT_WORLDS)?;
        let freq = readout_frequencies(&e, setup)?;
        let dev = max_abs_diff(&stored, &freq.frequencies);
        report.check("readout_frequencies", dev <= RECOMPUTE_TOLERANCE, format!("frequencies {stored:?}"));
    }
    if spec.collapse.is_some() {
        let d = json_f64(&json, "/collapse/max_divergence", file)?;
        report.bound("collapse_equivalence", "max trajectory divergence", d, COLLAPSE_TOLERANCE);
    }
    Ok(())
}

fn verify_spin(dir: &Path, scenario: &Scenario, setup: &SpinSetup, report: &mut VerifyReport) -> Result<(), CliError> {
    let spec = scenario.spin.as_ref().unwrap();
    let json = read_json(dir, SPIN_REPORT)?;
    let file = SPIN_REPORT;
    let volume = [json_f64(&json, "/probabilities_volume/up", file)?, json_f64(&json, "/probabilities_volume/down", file)?];
    let stored_ref = json_f64s(&json, "/probabilities_reference", file)?;
    report.bound("spin_born_identity", "max |P_volume - |alpha|^2, |beta|^2|", max_abs_diff(&volume, &stored_ref), BORN_TOLERANCE);
    let (up, down) = spin_reference(setup)?;
    report.bound("spin_reference", "max |stored - recomputed reference|", max_abs_diff(&stored_ref, &[up, down]), RECOMPUTE_TOLERANCE);
    if spec.worlds.is_some() {
        let stored = json_f64s(&json, "/empirical_frequencies", file)?;
        let e = load_worlds(dir, SPIN_WORLDS)?;
        let (fu, fd) = spin_frequencies(&e, setup)?;
        let dev = max_abs_diff(&stored, &[fu, fd]);
        report.check("spin_frequencies", dev <= RECOMPUTE_TOLERANCE, format!("frequencies ({fu:.4}, {fd:.4})"));
    }
    Ok(())
}
