//! Versioned JSON scenario schema.
//!
//! Every section except `schema_version` and `name` is optional. The main
//! pipeline (`evolution`, `worlds`, `projection`) needs `grid`, `masses`,
//! `initial_state` and `hamiltonian`; `measurement` and `spin` carry their
//! own grids. Any stochastic stage requires `seed`.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evolution::Hamiltonian;
use crate::grid::{make_grid, Grid};
use crate::measurement::{MeasurementSetup, PointerGeometry};
use crate::projection::ParticleLayout;
use crate::spin::{SpinSetup, SpinSystem};
use crate::states::{gaussian, grid_plane_wave, hermite_functions, orthonormalize, plane_wave, superpose};
use crate::wavefunction::Wavefunction;

pub const SCHEMA_VERSION: u32 = 1;

/// A schema problem located at a dotted key path.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub masses: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_state: Option<StateSpec>,
    #[serde(default)]
    pub hamiltonian: Option<HamiltonianSpec>,
    #[serde(default)]
    pub evolution: Option<EvolutionSpec>,
    #[serde(default)]
    pub worlds: Option<WorldsSpec>,
    #[serde(default)]
    pub projection: Option<ProjectionSpec>,
    #[serde(default)]
    pub measurement: Option<MeasurementSpec>,
    #[serde(default)]
    pub spin: Option<SpinSpec>,
    #[serde(default)]
    pub outputs: OutputsSpec,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub extent: Vec<(f64, f64)>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        make_grid(&self.extent, &self.points)
    }
}

/// Complex number written as `[re, im]`.
pub type ComplexSpec = (f64, f64);

fn complex(c: ComplexSpec) -> Complex64 {
    Complex64::new(c.0, c.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Gaussian {
        center: Vec<f64>,
        width: Vec<f64>,
        #[serde(default)]
        boost: Option<Vec<f64>>,
    },
    /// Either a wavevector `k` or integer `modes` (periodic on the box).
    PlaneWave {
        #[serde(default)]
        k: Option<Vec<f64>>,
        #[serde(default)]
        modes: Option<Vec<i64>>,
    },
    /// Harmonic-oscillator eigenfunction on a 1D grid.
    Hermite {
        index: usize,
        omega: f64,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default)]
        center: f64,
    },
    Superposition { terms: Vec<TermSpec> },
    /// Product of 1D factors, one per grid dimension group.
    Product { factors: Vec<FactorSpec> },
    Spinor { up: Box<StateSpec>, down: Box<StateSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coefficient: ComplexSpec,
    pub state: StateSpec,
}

/// A factor of a product state living on the listed grid dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub dims: Vec<usize>,
    pub state: StateSpec,
}

impl StateSpec {
    pub fn build(&self, grid: &Grid, hbar: f64) -> Result<Wavefunction> {
        match self {
            Self::Gaussian { center, width, boost } => {
                let zero = vec![0.0; grid.dims()];
                gaussian(grid, center, width, boost.as_deref().unwrap_or(&zero))
            }
            Self::PlaneWave { k, modes } => match (k, modes) {
                (Some(k), None) => plane_wave(grid, k),
                (None, Some(m)) => grid_plane_wave(grid, m),
                _ => Err(crate::Error::InvalidArgument("plane_wave needs exactly one of k, modes".into())),
            },
            Self::Hermite { index, omega, mass, center } => {
                Ok(hermite_functions(grid, index + 1, *omega, *mass, hbar, *center)?.pop().unwrap())
            }
            Self::Superposition { terms } => {
                let built = terms
                    .iter()
                    .map(|t| Ok((complex(t.coefficient), t.state.build(grid, hbar)?)))
                    .collect::<Result<Vec<_>>>()?;
                superpose(&built)
            }
            Self::Product { factors } => {
                let mut values = vec![Complex64::new(1.0, 0.0); grid.cell_count()];
                for f in factors {
                    let sub = grid.select(&f.dims)?;
                    let psi = f.state.build(&sub, hbar)?;
                    for (flat, v) in values.iter_mut().enumerate() {
                        let index = grid.multi_index(flat);
                        let sub_index: Vec<usize> = f.dims.iter().map(|&d| index[d]).collect();
                        *v *= psi.values()[sub.flat_index(&sub_index)];
                    }
                }
                Wavefunction::new(grid.clone(), 1, values, 0.0)
            }
            Self::Spinor { up, down } => Wavefunction::spinor(&up.build(grid, hbar)?, &down.build(grid, hbar)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    Free,
    Harmonic {
        omega: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Potential values per cell in storage order.
    Tabulated { values: Vec<f64> },
}

impl HamiltonianSpec {
    pub fn build(&self, grid: &Grid, masses: &[f64], hbar: f64) -> Result<Hamiltonian> {
        match self {
            Self::Free => Hamiltonian::free(grid, masses.to_vec(), hbar),
            Self::Harmonic { omega, center } => {
                let zero = vec![0.0; grid.dims()];
                Hamiltonian::harmonic(grid, masses.to_vec(), hbar, omega, center.as_deref().unwrap_or(&zero))
            }
            Self::Tabulated { values } => Hamiltonian::new(grid, masses.to_vec(), hbar, values.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "one_usize")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub edge_mass_abort: Option<f64>,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldsSpec {
    pub count: usize,
    #[serde(default)]
    pub dt_world: Option<f64>,
    /// Trajectory rows are written every this many snapshots.
    #[serde(default = "one_usize")]
    pub record_every: usize,
    /// Bins per dimension for the equivariance distance.
    #[serde(default)]
    pub bins: Option<usize>,
    /// Upper bound on the final TV distance enforced by `verify`.
    #[serde(default)]
    pub tv_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSpec {
    /// `(particle, axis)` per grid dimension.
    pub layout: Vec<(usize, usize)>,
    /// Physical-space boxes `[(lo, hi)]` per axis for expected counts.
    #[serde(default)]
    pub regions: Vec<Vec<(f64, f64)>>,
}

impl ProjectionSpec {
    pub fn layout(&self) -> Result<ParticleLayout> {
        ParticleLayout::new(self.layout.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    /// The first K oscillator eigenfunctions.
    Hermite {
        omega: f64,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default)]
        center: f64,
    },
    /// Pairs `(g_2j +- g_2j+1)/sqrt 2` of oscillator eigenfunctions; K even.
    HermitePairs {
        omega: f64,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default)]
        center: f64,
    },
}

impl BasisSpec {
    pub fn build(&self, grid: &Grid, k: usize, hbar: f64) -> Result<Vec<Wavefunction>> {
        match *self {
            Self::Hermite { omega, mass, center } => orthonormalize(&hermite_functions(grid, k, omega, mass, hbar, center)?),
            Self::HermitePairs { omega, mass, center } => {
                if !k.is_multiple_of(2) {
                    return Err(crate::Error::InvalidSetup("hermite_pairs needs an even number of outcomes".into()));
                }
                let g = hermite_functions(grid, k, omega, mass, hbar, center)?;
                let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                let mut states = Vec::with_capacity(k);
                for pair in g.chunks(2) {
                    states.push(superpose(&[(h, pair[0].clone()), (h, pair[1].clone())])?);
                    states.push(superpose(&[(h, pair[0].clone()), (-h, pair[1].clone())])?);
                }
                orthonormalize(&states)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerSpec {
    pub initial_center: f64,
    pub centers: Vec<f64>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseSpec {
    pub branch: usize,
    pub worlds: usize,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "one_usize")]
    pub snapshot_every: usize,
    /// Masses on `X x Y`, pointer last.
    pub masses: Vec<f64>,
    pub hamiltonian: HamiltonianSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub system_grid: GridSpec,
    pub pointer_grid: GridSpec,
    pub basis: BasisSpec,
    pub coefficients: Vec<ComplexSpec>,
    pub outcome_values: Vec<f64>,
    pub pointer: PointerSpec,
    #[serde(default)]
    pub worlds: Option<usize>,
    #[serde(default)]
    pub collapse: Option<CollapseSpec>,
}

impl MeasurementSpec {
    pub fn build(&self, hbar: f64) -> Result<MeasurementSetup> {
        let gx = self.system_grid.build()?;
        let gy = self.pointer_grid.build()?;
        let basis = self.basis.build(&gx, self.coefficients.len(), hbar)?;
        let geometry = PointerGeometry {
            initial_center: self.pointer.initial_center,
            centers: self.pointer.centers.clone(),
            width: self.pointer.width,
        };
        MeasurementSetup::with_bump_pointers(
            basis,
            self.coefficients.iter().copied().map(complex).collect(),
            self.outcome_values.clone(),
            &gy,
            &geometry,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpinSystemSpec {
    Product { alpha: ComplexSpec, beta: ComplexSpec, chi: StateSpec },
    Entangled { up: StateSpec, down: StateSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinPointerSpec {
    pub initial_center: f64,
    pub up: f64,
    pub down: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSpec {
    pub system_grid: GridSpec,
    pub pointer_grid: GridSpec,
    pub system: SpinSystemSpec,
    pub pointer: SpinPointerSpec,
    #[serde(default)]
    pub worlds: Option<usize>,
}

impl SpinSpec {
    pub fn build(&self, hbar: f64) -> Result<SpinSetup> {
        let gx = self.system_grid.build()?;
        let gy = self.pointer_grid.build()?;
        let system = match &self.system {
            SpinSystemSpec::Product { alpha, beta, chi } => SpinSystem::Product {
                alpha: complex(*alpha),
                beta: complex(*beta),
                chi: chi.build(&gx, hbar)?,
            },
            SpinSystemSpec::Entangled { up, down } => SpinSystem::Entangled {
                up: up.build(&gx, hbar)?,
                down: down.build(&gx, hbar)?,
            },
        };
        let p = &self.pointer;
        SpinSetup::with_bump_pointers(system, &gy, p.initial_center, p.up, p.down, p.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSpec {
    /// Binary snapshots of every stored wavefunction.
    #[serde(default = "yes")]
    pub snapshots: bool,
    /// CSV copy of the initial and final wavefunctions (small grids only).
    #[serde(default)]
    pub csv_snapshots: bool,
    #[serde(default = "yes")]
    pub trajectories: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputsSpec {
    fn default() -> Self {
        Self { snapshots: true, csv_snapshots: false, trajectories: true }
    }
}

impl Scenario {
    /// Parses JSON text, reporting the key path of the first schema problem.
    pub fn from_json(text: &str) -> std::result::Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> std::result::Result<(Self, Vec<u8>), SchemaError> {
        let bytes = std::fs::read(path).map_err(|e| schema("<file>", format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| schema("<file>", e.to_string()))?;
        Ok((Self::from_json(text)?, bytes))
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> std::result::Result<(), SchemaError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        if self.name.trim().is_empty() {
            return Err(schema("name", "must not be empty"));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(schema("hbar", "must be positive"));
        }
        let main = self.evolution.is_some() || self.worlds.is_some() || self.projection.is_some();
        if main {
            let grid = self.grid.as_ref().ok_or_else(|| schema("grid", "required by evolution/worlds/projection"))?;
            let dims = grid.extent.len();
            if grid.points.len() != dims {
                return Err(schema("grid.points", format!("expected {dims} entries")));
            }
            let masses = self.masses.as_ref().ok_or_else(|| schema("masses", "required by evolution/worlds/projection"))?;
            if masses.len() != dims {
                return Err(schema("masses", format!("expected {dims} entries, got {}", masses.len())));
            }
            let state = self.initial_state.as_ref().ok_or_else(|| schema("initial_state", "required"))?;
            check_state(state, dims, "initial_state")?;
            if self.hamiltonian.is_none() && self.evolution.is_some() {
                return Err(schema("hamiltonian", "required by evolution"));
            }
            if let Some(HamiltonianSpec::Harmonic { omega, center }) = &self.hamiltonian {
                if omega.len() != dims {
                    return Err(schema("hamiltonian.omega", format!("expected {dims} entries")));
                }
                if center.as_ref().is_some_and(|c| c.len() != dims) {
                    return Err(schema("hamiltonian.center", format!("expected {dims} entries")));
                }
            }
        }
        if let Some(w) = &self.worlds {
            if self.evolution.is_none() {
                return Err(schema("worlds", "requires evolution"));
            }
            if w.count == 0 {
                return Err(schema("worlds.count", "must be positive"));
            }
            if w.record_every == 0 {
                return Err(schema("worlds.record_every", "must be positive"));
            }
            self.require_seed("worlds")?;
        }
        if let Some(e) = &self.evolution {
            if e.snapshot_every == 0 {
                return Err(schema("evolution.snapshot_every", "must be positive"));
            }
            if !(e.dt > 0.0) {
                return Err(schema("evolution.dt", "must be positive"));
            }
            if !(e.t_final >= 0.0) {
                return Err(schema("evolution.t_final", "must be non-negative"));
            }
        }
        if let Some(m) = &self.measurement {
            let k = m.coefficients.len();
            if k == 0 {
                return Err(schema("measurement.coefficients", "must not be empty"));
            }
            if m.outcome_values.len() != k {
                return Err(schema("measurement.outcome_values", format!("expected {k} entries")));
            }
            if m.pointer.centers.len() != k {
                return Err(schema("measurement.pointer.centers", format!("expected {k} entries")));
            }
            if m.pointer_grid.extent.len() != 1 {
                return Err(schema("measurement.pointer_grid", "must be one-dimensional"));
            }
            if m.worlds.is_some() {
                self.require_seed("measurement.worlds")?;
            }
            if let Some(c) = &m.collapse {
                if c.branch >= k {
                    return Err(schema("measurement.collapse.branch", format!("must be < {k}")));
                }
                if c.masses.len() != m.system_grid.extent.len() + 1 {
                    return Err(schema("measurement.collapse.masses", "one mass per system dimension plus the pointer"));
                }
                self.require_seed("measurement.collapse")?;
            }
        }
        if let Some(s) = &self.spin {
            if s.pointer_grid.extent.len() != 1 {
                return Err(schema("spin.pointer_grid", "must be one-dimensional"));
            }
            if s.worlds.is_some() {
                self.require_seed("spin.worlds")?;
            }
        }
        if let Some(p) = &self.projection {
            let dims = self.grid.as_ref().map_or(0, |g| g.extent.len());
            if p.layout.len() != dims {
                return Err(schema("projection.layout", format!("expected {dims} entries")));
            }
        }
        Ok(())
    }

    fn require_seed(&self, stage: &str) -> std::result::Result<(), SchemaError> {
        if self.seed.is_none() {
            return Err(schema("seed", format!("required by {stage}")));
        }
        Ok(())
    }
}

fn check_state(state: &StateSpec, dims: usize, path: &str) -> std::result::Result<(), SchemaError> {
    match state {
        StateSpec::Gaussian { center, width, boost } => {
            if center.len() != dims {
                return Err(schema(format!("{path}.center"), format!("expected {dims} entries")));
            }
            if width.len() != dims {
                return Err(schema(format!("{path}.width"), format!("expected {dims} entries")));
            }
            if boost.as_ref().is_some_and(|b| b.len() != dims) {
                return Err(schema(format!("{path}.boost"), format!("expected {dims} entries")));
            }
        }
        StateSpec::PlaneWave { k, modes } => match (k, modes) {
            (Some(k), None) if k.len() == dims => {}
            (None, Some(m)) if m.len() == dims => {}
            _ => return Err(schema(path, format!("plane_wave needs exactly one of k, modes with {dims} entries"))),
        },
        StateSpec::Hermite { .. } => {
            if dims != 1 {
                return Err(schema(path, "hermite states need a 1D grid"));
            }
        }
        StateSpec::Superposition { terms } => {
            if terms.is_empty() {
                return Err(schema(format!("{path}.terms"), "must not be empty"));
            }
            for (i, t) in terms.iter().enumerate() {
                check_state(&t.state, dims, &format!("{path}.terms[{i}].state"))?;
            }
        }
        StateSpec::Product { factors } => {
            let mut seen = vec![false; dims];
            for (i, f) in factors.iter().enumerate() {
                for &d in &f.dims {
                    if d >= dims || seen[d] {
                        return Err(schema(format!("{path}.factors[{i}].dims"), "dimensions must be distinct and in range"));
                    }
                    seen[d] = true;
                }
                check_state(&f.state, f.dims.len(), &format!("{path}.factors[{i}].state"))?;
            }
            if seen.iter().any(|s| !s) {
                return Err(schema(format!("{path}.factors"), "factors must cover every dimension"));
            }
        }
        StateSpec::Spinor { up, down } => {
            check_state(up, dims, &format!("{path}.up"))?;
            check_state(down, dims, &format!("{path}.down"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_located() {
        let err = Scenario::from_json(r#"{"schema_version": 1, "name": "x", "evolution": {"t_final": 1, "dt": 0.1, "snapshot_evry": 2}}"#).unwrap_err();
        assert_eq!(err.path, "evolution.snapshot_evry");
        assert!(err.message.contains("snapshot_evry"));
    }

    #[test]
    fn wrong_type_is_located() {
        let err = Scenario::from_json(r#"{"schema_version": 1, "name": "x", "grid": {"extent": [[0, 1]], "points": ["many"]}}"#).unwrap_err();
        assert_eq!(err.path, "grid.points[0]");
    }

    #[test]
    fn cross_field_checks() {
        let text = r#"{"schema_version": 1, "name": "x", "grid": {"extent": [[0, 1]], "points": [64]},
            "masses": [1, 1], "initial_state": {"kind": "gaussian", "center": [0.5], "width": [0.1]},
            "hamiltonian": {"kind": "free"}, "evolution": {"t_final": 1, "dt": 0.1}}"#;
        assert_eq!(Scenario::from_json(text).unwrap_err().path, "masses");
        let text = text.replace("[1, 1]", "[1]").replace("}}", "}, \"worlds\": {\"count\": 10}}");
        assert_eq!(Scenario::from_json(&text).unwrap_err().path, "seed");
        let err = Scenario::from_json(r#"{"schema_version": 7, "name": "x"}"#).unwrap_err();
        assert_eq!(err.path, "schema_version");
    }

    #[test]
    fn product_state_builds_tensor() {
        let grid = make_grid(&[(-8.0, 8.0), (-8.0, 8.0)], &[32, 32]).unwrap();
        let spec = StateSpec::Product {
            factors: vec![
                FactorSpec { dims: vec![1], state: StateSpec::Gaussian { center: vec![1.0], width: vec![1.0], boost: None } },
                FactorSpec { dims: vec![0], state: StateSpec::Gaussian { center: vec![-2.0], width: vec![0.8], boost: None } },
            ],
        };
        let psi = spec.build(&grid, 1.0).unwrap();
        let direct = gaussian(&grid, &[-2.0, 1.0], &[0.8, 1.0], &[0.0, 0.0]).unwrap();
        for (a, b) in psi.values().iter().zip(direct.values()) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
