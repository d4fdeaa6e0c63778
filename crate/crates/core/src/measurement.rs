//! Ideal measurements on a system space `X` coupled to a one-dimensional
//! pointer space `Y`.
//!
//! Product states live on `X x Y` with the pointer coordinate last. Outcome
//! indices are 0-based throughout.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolveOptions, Hamiltonian};
use crate::grid::Grid;
use crate::rng::substream;
use crate::states::bump;
use crate::wavefunction::{inner_product, probability, world_volume, Region, Wavefunction};
use crate::worlds::{advance_worlds, AdvanceOptions, CellSampler, WorldEnsemble};

/// Orthonormality and equal-norm tolerance for setups.
pub const SETUP_TOLERANCE: f64 = 1e-10;
/// Relative residual above which a state is not of pre-measurement form.
pub const MODEL_TOLERANCE: f64 = 1e-8;
/// Overlap mass above which branches count as re-interfered.
pub const OVERLAP_TOLERANCE: f64 = 1e-8;
/// Minimum number of empty cells between library-built pointer supports.
pub const LIBRARY_GAP_CELLS: usize = 4;

#[derive(Debug, Clone)]
pub struct MeasurementSetup {
    system_grid: Grid,
    pointer_grid: Grid,
    basis: Vec<Wavefunction>,
    coefficients: Vec<Complex64>,
    pointer_initial: Wavefunction,
    pointer_states: Vec<Wavefunction>,
    supports: Vec<Region>,
    outcome_values: Vec<f64>,
}

/// Equal-width bump pointer states.
#[derive(Debug, Clone, PartialEq)]
pub struct PointerGeometry {
    pub initial_center: f64,
    pub centers: Vec<f64>,
    pub width: f64,
}

impl MeasurementSetup {
    pub fn new(
        basis: Vec<Wavefunction>,
        coefficients: Vec<Complex64>,
        pointer_initial: Wavefunction,
        pointer_states: Vec<Wavefunction>,
        outcome_values: Vec<f64>,
    ) -> Result<Self> {
        let k = basis.len();
        if k == 0 {
            return Err(Error::InvalidSetup("empty basis".into()));
        }
        if coefficients.len() != k || pointer_states.len() != k || outcome_values.len() != k {
            return Err(Error::InvalidSetup(format!(
                "basis has {k} states but {} coefficients, {} pointer states, {} outcome values",
                coefficients.len(),
                pointer_states.len(),
                outcome_values.len()
            )));
        }
        if coefficients.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) || outcome_values.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("measurement coefficients".into()));
        }
        let system_grid = basis[0].grid().clone();
        for chi in &basis {
            if chi.grid() != &system_grid || chi.components() != 1 {
                return Err(Error::InvalidSetup("basis states must be scalar fields on one grid".into()));
            }
        }
        for i in 0..k {
            for j in 0..=i {
                let s = inner_product(&basis[i], &basis[j])?;
                let expected = if i == j { 1.0 } else { 0.0 };
                if (s - expected).norm() > SETUP_TOLERANCE {
                    return Err(Error::InvalidSetup(format!("basis not orthonormal: <chi_{i}|chi_{j}> = {s}")));
                }
            }
        }
        let pointer_grid = pointer_initial.grid().clone();
        if pointer_grid.dims() != 1 || pointer_initial.components() != 1 {
            return Err(Error::InvalidSetup("pointer states must be scalar fields on a 1D grid".into()));
        }
        let norm0 = pointer_initial.norm();
        if !(norm0 > 0.0) {
            return Err(Error::InvalidSetup("initial pointer state has zero norm".into()));
        }
        for (i, phi) in pointer_states.iter().enumerate() {
            if phi.grid() != &pointer_grid || phi.components() != 1 {
                return Err(Error::InvalidSetup("pointer states must share the pointer grid".into()));
            }
            if (phi.norm() - norm0).abs() > SETUP_TOLERANCE {
                return Err(Error::InvalidSetup(format!(
                    "pointer state {i} has norm {} but the initial pointer has {norm0}",
                    phi.norm()
                )));
            }
        }
        let supports: Vec<Region> = pointer_states
            .iter()
            .map(|phi| Region::new(&pointer_grid, phi.values().iter().map(|z| z.norm_sqr() > 0.0).collect()))
            .collect::<Result<_>>()?;
        if k > 1 && support_gap(&supports)? < 1 {
            return Err(Error::InvalidSetup("pointer supports must be separated by at least one empty cell".into()));
        }
        Ok(Self {
            system_grid,
            pointer_grid,
            basis,
            coefficients,
            pointer_initial,
            pointer_states,
            supports,
            outcome_values,
        })
    }

    /// Setup with bump pointer states, requiring at least
    /// [`LIBRARY_GAP_CELLS`] empty cells between supports.
    pub fn with_bump_pointers(
        basis: Vec<Wavefunction>,
        coefficients: Vec<Complex64>,
        outcome_values: Vec<f64>,
        pointer_grid: &Grid,
        geometry: &PointerGeometry,
    ) -> Result<Self> {
        let phi0 = bump(pointer_grid, geometry.initial_center, geometry.width)?;
        let phis = geometry
            .centers
            .iter()
            .map(|&c| bump(pointer_grid, c, geometry.width))
            .collect::<Result<Vec<_>>>()?;
        let setup = Self::new(basis, coefficients, phi0, phis, outcome_values)?;
        if setup.len() > 1 && support_gap(&setup.supports)? < LIBRARY_GAP_CELLS {
            return Err(Error::InvalidSetup(format!(
                "pointer supports must be separated by at least {LIBRARY_GAP_CELLS} empty cells"
            )));
        }
        Ok(setup)
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn system_grid(&self) -> &Grid {
        &self.system_grid
    }

    pub fn pointer_grid(&self) -> &Grid {
        &self.pointer_grid
    }

    pub fn product_grid(&self) -> Result<Grid> {
        self.system_grid.product(&self.pointer_grid)
    }

    pub fn basis(&self) -> &[Wavefunction] {
        &self.basis
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn pointer_initial(&self) -> &Wavefunction {
        &self.pointer_initial
    }

    pub fn pointer_states(&self) -> &[Wavefunction] {
        &self.pointer_states
    }

    /// Support masks `Y_i` of the pointer states.
    pub fn supports(&self) -> &[Region] {
        &self.supports
    }

    pub fn outcome_values(&self) -> &[f64] {
        &self.outcome_values
    }

    /// Same setup with different coefficients.
    pub fn with_coefficients(&self, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != self.len() {
            return Err(Error::InvalidSetup("coefficient count changed".into()));
        }
        Ok(Self { coefficients, ..self.clone() })
    }

    /// `X x Y_i` as a region of the product grid.
    pub fn branch_region(&self, i: usize) -> Result<Region> {
        let support = self.supports.get(i).ok_or_else(|| Error::InvalidArgument(format!("no outcome {i}")))?;
        product_region(&self.system_grid, support)
    }
}

/// Smallest number of empty cells between two different supports on a
/// periodic 1D grid.
pub(crate) fn support_gap(supports: &[Region]) -> Result<usize> {
    let n = supports[0].mask().len();
    let mut label = vec![None; n];
    for (k, region) in supports.iter().enumerate() {
        for (cell, &m) in region.mask().iter().enumerate() {
            if m {
                if label[cell].is_some() {
                    return Err(Error::InvalidSetup("pointer supports overlap".into()));
                }
                label[cell] = Some(k);
            }
        }
    }
    let occupied: Vec<(usize, usize)> = label.iter().enumerate().filter_map(|(i, l)| l.map(|k| (i, k))).collect();
    let mut gap = usize::MAX;
    for (w, &(pos, k)) in occupied.iter().enumerate() {
        let (next, kn) = occupied[(w + 1) % occupied.len()];
        if kn != k {
            gap = gap.min((next + n - pos - 1) % n);
        }
    }
    Ok(gap)
}

pub(crate) fn product_region(system: &Grid, support: &Region) -> Result<Region> {
    let grid = system.product(support.grid())?;
    let ny = support.mask().len();
    let mask = (0..grid.cell_count()).map(|flat| support.mask()[flat % ny]).collect();
    Region::new(&grid, mask)
}

/// `r(x) = <phi_0 | psi(x, .)>_Y / ||phi_0||^2` for one component stored
/// with the pointer coordinate last.
pub(crate) fn pointer_factor(values: &[Complex64], phi0: &Wavefunction) -> Vec<Complex64> {
    let ny = phi0.values().len();
    let dvy = phi0.grid().cell_volume();
    let scale = dvy / phi0.norm_sqr();
    values
        .chunks(ny)
        .map(|row| row.iter().zip(phi0.values()).map(|(p, f)| f.conj() * p).sum::<Complex64>() * scale)
        .collect()
}

pub(crate) fn outer(r: &[Complex64], phi: &Wavefunction) -> Vec<Complex64> {
    r.iter().flat_map(|a| phi.values().iter().map(move |b| a * b)).collect()
}

fn check_product(psi: &Wavefunction, s: &MeasurementSetup) -> Result<()> {
    if psi.grid() != &s.product_grid()? {
        return Err(Error::GridMismatch("state is not on the setup's X x Y grid".into()));
    }
    if psi.components() != 1 {
        return Err(Error::ComponentMismatch { expected: 1, got: psi.components() });
    }
    Ok(())
}

fn system_state(s: &MeasurementSetup, coefficients: &[Complex64]) -> Result<Wavefunction> {
    let mut values = vec![Complex64::new(0.0, 0.0); s.system_grid.cell_count()];
    for (c, chi) in coefficients.iter().zip(&s.basis) {
        for (v, z) in values.iter_mut().zip(chi.values()) {
            *v += c * z;
        }
    }
    Wavefunction::new(s.system_grid.clone(), 1, values, 0.0)
}

/// `Psi = sum_i alpha_i chi_i (x) phi_0`.
pub fn premeasurement_state(s: &MeasurementSetup) -> Result<Wavefunction> {
    let grid = s.product_grid()?;
    let system = system_state(s, &s.coefficients)?;
    Wavefunction::new(grid, 1, outer(system.values(), &s.pointer_initial), 0.0)
}

/// Coefficients `c_i` of a pre-measurement-form state in the basis
/// `chi_i (x) phi_0`, after checking the residual.
fn branch_coefficients(psi: &Wavefunction, s: &MeasurementSetup) -> Result<Vec<Complex64>> {
    check_product(psi, s)?;
    let r = pointer_factor(psi.values(), &s.pointer_initial);
    let dvx = s.system_grid.cell_volume();
    let coefficients: Vec<Complex64> = s
        .basis
        .iter()
        .map(|chi| chi.values().iter().zip(&r).map(|(c, a)| c.conj() * a).sum::<Complex64>() * dvx)
        .collect();
    let recon = system_state(s, &coefficients)?;
    let full = outer(recon.values(), &s.pointer_initial);
    let mut res = 0.0;
    let mut total = 0.0;
    for (p, q) in psi.values().iter().zip(&full) {
        res += (p - q).norm_sqr();
        total += p.norm_sqr();
    }
    let residual = if total > 0.0 { (res / total).sqrt() } else { 0.0 };
    if residual > MODEL_TOLERANCE {
        return Err(Error::ModelViolation { residual });
    }
    Ok(coefficients)
}

/// The ideal transition `chi_i (x) phi_0 -> chi_i (x) phi_i`, applied to the
/// basis expansion of `psi`.
pub fn apply_ideal_measurement(psi: &Wavefunction, s: &MeasurementSetup) -> Result<Wavefunction> {
    let coefficients = branch_coefficients(psi, s)?;
    let ny = s.pointer_grid.cell_count();
    let mut values = vec![Complex64::new(0.0, 0.0); psi.values().len()];
    for ((c, chi), phi) in coefficients.iter().zip(&s.basis).zip(&s.pointer_states) {
        for (row, x) in values.chunks_mut(ny).zip(chi.values()) {
            let a = c * x;
            for (v, f) in row.iter_mut().zip(phi.values()) {
                *v += a * f;
            }
        }
    }
    Wavefunction::new(psi.grid().clone(), 1, values, psi.time())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeProbabilities {
    /// World volume of each `X x Y_i`.
    pub volumes: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Fraction of the total volume outside every `X x Y_i`.
    pub escaped: f64,
}

/// `P_i = mu(X x Y_i) / mu(X x Y)`.
pub fn outcome_probabilities(psi_post: &Wavefunction, s: &MeasurementSetup) -> Result<OutcomeProbabilities> {
    check_product(psi_post, s)?;
    let mut volumes = Vec::with_capacity(s.len());
    let mut probabilities = Vec::with_capacity(s.len());
    for i in 0..s.len() {
        let region = s.branch_region(i)?;
        volumes.push(world_volume(psi_post, &region)?);
        probabilities.push(probability(psi_post, &region)?);
    }
    let escaped = (1.0 - probabilities.iter().sum::<f64>()).max(0.0);
    Ok(OutcomeProbabilities { volumes, probabilities, escaped })
}

/// `|alpha_i|^2 / sum_j |alpha_j|^2`.
pub fn born_reference(s: &MeasurementSetup) -> Result<Vec<f64>> {
    born_weights(&s.coefficients)
}

pub(crate) fn born_weights(coefficients: &[Complex64]) -> Result<Vec<f64>> {
    let total: f64 = coefficients.iter().map(|a| a.norm_sqr()).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidSetup("all coefficients are zero".into()));
    }
    Ok(coefficients.iter().map(|a| a.norm_sqr() / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expectation {
    /// `sum_i p_i a_i`.
    pub born: f64,
    /// `<psi|A psi> / <psi|psi>` with `A = sum_i a_i |chi_i><chi_i|`.
    pub operator: f64,
}

pub fn expectation(s: &MeasurementSetup) -> Result<Expectation> {
    let p = born_reference(s)?;
    let born: f64 = p.iter().zip(&s.outcome_values).map(|(p, a)| p * a).sum();
    let psi = system_state(s, &s.coefficients)?;
    let mut a_psi = vec![Complex64::new(0.0, 0.0); psi.values().len()];
    for (chi, a) in s.basis.iter().zip(&s.outcome_values) {
        let c = inner_product(chi, &psi)? * a;
        for (v, z) in a_psi.iter_mut().zip(chi.values()) {
            *v += c * z;
        }
    }
    let a_psi = Wavefunction::new(psi.grid().clone(), 1, a_psi, 0.0)?;
    let operator = inner_product(&psi, &a_psi)?.re / psi.norm_sqr();
    if (born - operator).abs() > MODEL_TOLERANCE {
        return Err(Error::ExpectationMismatch { born, operator });
    }
    Ok(Expectation { born, operator })
}

/// Outcome whose pointer support contains the world's last coordinate.
pub fn readout(world: &[f64], s: &MeasurementSetup) -> Result<Option<usize>> {
    let y = *world.last().ok_or_else(|| Error::DimensionMismatch("empty world".into()))?;
    let Some(cell) = s.pointer_grid.locate_cell(&[y])? else {
        return Ok(None);
    };
    Ok(s.supports.iter().position(|r| r.contains(cell[0])))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReadoutFrequencies {
    pub frequencies: Vec<f64>,
    /// Fraction of alive worlds outside every pointer support.
    pub unassigned: f64,
    pub alive: usize,
}

pub fn readout_frequencies(ensemble: &WorldEnsemble, s: &MeasurementSetup) -> Result<ReadoutFrequencies> {
    let mut counts = vec![0usize; s.len()];
    let mut none = 0usize;
    let mut alive = 0usize;
    for i in 0..ensemble.len() {
        if !ensemble.alive()[i] {
            continue;
        }
        alive += 1;
        match readout(ensemble.position(i), s)? {
            Some(k) => counts[k] += 1,
            None => none += 1,
        }
    }
    if alive == 0 {
        return Err(Error::NoAliveWorlds);
    }
    Ok(ReadoutFrequencies {
        frequencies: counts.iter().map(|&c| c as f64 / alive as f64).collect(),
        unassigned: none as f64 / alive as f64,
        alive,
    })
}

/// Branch `i` of a post-measurement state: `psi` restricted to `X x Y_i`,
/// not renormalized. A branch carrying less than `MODEL_TOLERANCE^2` of the
/// total volume counts as zero.
pub fn collapse(psi: &Wavefunction, s: &MeasurementSetup, i: usize) -> Result<Wavefunction> {
    check_product(psi, s)?;
    let region = s.branch_region(i)?;
    let values: Vec<Complex64> = psi
        .values()
        .iter()
        .zip(region.mask())
        .map(|(z, &m)| if m { *z } else { Complex64::new(0.0, 0.0) })
        .collect();
    let mass: f64 = values.iter().map(|z| z.norm_sqr()).sum();
    let total: f64 = psi.values().iter().map(|z| z.norm_sqr()).sum();
    if !(mass > MODEL_TOLERANCE * MODEL_TOLERANCE * total) {
        return Err(Error::ZeroBranch { branch: i });
    }
    Wavefunction::new(psi.grid().clone(), 1, values, psi.time())
}

/// `int |a| |b - a| / mu(b)`.
fn overlap_mass(branch: &Wavefunction, full: &Wavefunction) -> f64 {
    let cross: f64 = branch
        .values()
        .iter()
        .zip(full.values())
        .map(|(a, b)| a.norm() * (b - a).norm())
        .sum();
    cross / full.norm_sqr().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseEquivalence {
    pub branch: usize,
    /// Largest max-norm distance between the two trajectories of any world.
    pub max_divergence: f64,
    /// Largest overlap mass seen over the horizon.
    pub max_overlap: f64,
    pub worlds: usize,
    pub frozen_full: usize,
    pub frozen_collapsed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonOptions {
    pub horizon: f64,
    pub dt: f64,
    pub snapshot_every: usize,
    pub dt_world: Option<f64>,
}

/// Integrates every world twice over the horizon, once under the full
/// post-measurement state and once under its collapsed branch `i`, and
/// reports the largest divergence. All worlds must start inside `X x Y_i`.
pub fn collapse_equivalence(
    psi_post: &Wavefunction,
    s: &MeasurementSetup,
    branch: usize,
    worlds: &WorldEnsemble,
    h: &Hamiltonian,
    options: HorizonOptions,
) -> Result<CollapseEquivalence> {
    for i in 0..worlds.len() {
        if readout(worlds.position(i), s)? != Some(branch) {
            return Err(Error::WorldOutsideBranch { branch });
        }
    }
    let collapsed = collapse(psi_post, s, branch)?;
    let evolve_options = EvolveOptions {
        snapshot_every: options.snapshot_every,
        edge_mass_abort: None,
    };
    let full = evolve(psi_post, h, options.horizon, options.dt, evolve_options)?;
    let part = evolve(&collapsed, h, options.horizon, options.dt, evolve_options)?;
    let mut max_overlap = 0.0f64;
    for (a, b) in part.snapshots.iter().zip(&full.snapshots) {
        let overlap = overlap_mass(a, b);
        max_overlap = max_overlap.max(overlap);
        if overlap > OVERLAP_TOLERANCE {
            return Err(Error::BranchesReinterfered { time: a.time(), overlap });
        }
    }
    let advance = AdvanceOptions {
        dt_world: options.dt_world,
        record_every: 1,
    };
    let a = advance_worlds(worlds, &full.snapshots, h.masses(), h.hbar(), advance)?;
    let b = advance_worlds(worlds, &part.snapshots, h.masses(), h.hbar(), advance)?;
    let max_divergence = a
        .record
        .unwrapped
        .iter()
        .flatten()
        .zip(b.record.unwrapped.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(CollapseEquivalence {
        branch,
        max_divergence,
        max_overlap,
        worlds: worlds.len(),
        frozen_full: a.stats.frozen,
        frozen_collapsed: b.stats.frozen,
    })
}

/// Carries pre-measurement worlds through the instantaneous transition.
///
/// Each world keeps its system coordinates `x`, picks branch `i` with
/// probability proportional to `|alpha_i chi_i(x)|^2` and redraws the pointer
/// coordinate from `|phi_i|^2`. No world is created or removed.
pub fn carry_worlds(ensemble: &WorldEnsemble, s: &MeasurementSetup) -> Result<WorldEnsemble> {
    let grid = s.product_grid()?;
    if ensemble.dims() != grid.dims() {
        return Err(Error::DimensionMismatch("ensemble is not on X x Y".into()));
    }
    let samplers = s
        .pointer_states
        .iter()
        .map(|phi| CellSampler::new(&s.pointer_grid, &phi.density()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = substream(ensemble.seed(), "measurement");
    let mut out = ensemble.clone();
    let dx = s.system_grid.dims();
    for w in 0..ensemble.len() {
        let x = &ensemble.position(w)[..dx];
        let weights: Vec<f64> = match s.system_grid.locate_cell(x)? {
            Some(index) => {
                let flat = s.system_grid.flat_index(&index);
                s.coefficients
                    .iter()
                    .zip(&s.basis)
                    .map(|(a, chi)| (a * chi.values()[flat]).norm_sqr())
                    .collect()
            }
            None => vec![0.0; s.len()],
        };
        let total: f64 = weights.iter().sum();
        let branch = if total > 0.0 {
            let u = rand::Rng::random::<f64>(&mut rng) * total;
            let mut acc = 0.0;
            weights.iter().position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(weights.len() - 1)
        } else {
            let fallback = born_reference(s)?;
            let u = rand::Rng::random::<f64>(&mut rng);
            let mut acc = 0.0;
            fallback.iter().position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(s.len() - 1)
        };
        let y = samplers[branch].draw(&mut rng)[0];
        out.set_coordinate(w, dx, y);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementReport {
    /// `[re, im]` pairs.
    pub coefficients: Vec<[f64; 2]>,
    pub outcome_values: Vec<f64>,
    pub volumes: Vec<f64>,
    pub probabilities_volume: Vec<f64>,
    pub probabilities_born: Vec<f64>,
    pub escaped_mass: f64,
    pub empirical_frequencies: Option<Vec<f64>>,
    pub unassigned_fraction: Option<f64>,
    pub worlds: Option<usize>,
    pub expectation: Expectation,
    pub collapse: Option<CollapseEquivalence>,
}

impl MeasurementReport {
    pub fn new(s: &MeasurementSetup, outcome: &OutcomeProbabilities, frequencies: Option<&ReadoutFrequencies>, collapse: Option<CollapseEquivalence>) -> Result<Self> {
        Ok(Self {
            coefficients: s.coefficients.iter().map(|c| [c.re, c.im]).collect(),
            outcome_values: s.outcome_values.clone(),
            volumes: outcome.volumes.clone(),
            probabilities_volume: outcome.probabilities.clone(),
            probabilities_born: born_reference(s)?,
            escaped_mass: outcome.escaped,
            empirical_frequencies: frequencies.map(|f| f.frequencies.clone()),
            unassigned_fraction: frequencies.map(|f| f.unassigned),
            worlds: frequencies.map(|f| f.alive),
            expectation: expectation(s)?,
            collapse,
        })
    }
}
