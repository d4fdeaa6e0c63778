//! Strang-split spectral propagation of the Schrödinger equation and the
//! continuity-equation diagnostic.
//!
//! One step is `K(dt/2) D(dt) K(dt/2)`, where the kick `K` multiplies each cell
//! by `exp(-i V dt / 2 hbar)` (or the exact 2x2 exponential of `V + C(x)` for
//! spinors with a coupling field) and the drift `D` multiplies each Fourier
//! mode by `exp(-i hbar sum_d k_d^2 dt / 2 m_d)`. Both factors are exact
//! unitaries, so the norm is conserved to rounding.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectral::Spectral;
use crate::wavefunction::{check_masses, Wavefunction, EDGE_MASS_WARNING};

pub type Matrix2 = [[Complex64; 2]; 2];

const HERMITIAN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Hamiltonian {
    grid: Grid,
    masses: Vec<f64>,
    hbar: f64,
    potential: Vec<f64>,
    spinor_coupling: Option<Vec<Matrix2>>,
}

impl Hamiltonian {
    pub fn new(grid: &Grid, masses: Vec<f64>, hbar: f64, potential: Vec<f64>) -> Result<Self> {
        check_masses(&masses, grid.dims())?;
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("hbar must be positive, got {hbar}")));
        }
        if potential.len() != grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "potential has {} values for {} cells",
                potential.len(),
                grid.cell_count()
            )));
        }
        if let Some(i) = potential.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("potential at cell {i}")));
        }
        Ok(Self {
            grid: grid.clone(),
            masses,
            hbar,
            potential,
            spinor_coupling: None,
        })
    }

    pub fn free(grid: &Grid, masses: Vec<f64>, hbar: f64) -> Result<Self> {
        Self::new(grid, masses, hbar, vec![0.0; grid.cell_count()])
    }

    pub fn from_potential_fn(grid: &Grid, masses: Vec<f64>, hbar: f64, v: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let potential = grid.centers().map(|x| v(&x)).collect();
        Self::new(grid, masses, hbar, potential)
    }

    /// `V = sum_d m_d omega_d^2 (x_d - c_d)^2 / 2`.
    pub fn harmonic(grid: &Grid, masses: Vec<f64>, hbar: f64, omega: &[f64], center: &[f64]) -> Result<Self> {
        if omega.len() != grid.dims() || center.len() != grid.dims() {
            return Err(Error::DimensionMismatch("harmonic omega/center length".into()));
        }
        let m = masses.clone();
        Self::from_potential_fn(grid, masses, hbar, |x| {
            (0..x.len())
                .map(|d| 0.5 * m[d] * omega[d] * omega[d] * (x[d] - center[d]).powi(2))
                .sum()
        })
    }

    /// Adds a per-cell Hermitian 2x2 coupling acting on spinor components.
    pub fn with_spinor_coupling(mut self, coupling: Vec<Matrix2>) -> Result<Self> {
        if coupling.len() != self.grid.cell_count() {
            return Err(Error::GridMismatch("spinor coupling length".into()));
        }
        for (i, m) in coupling.iter().enumerate() {
            let finite = m.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite());
            let hermitian = m[0][0].im.abs() <= HERMITIAN_TOLERANCE
                && m[1][1].im.abs() <= HERMITIAN_TOLERANCE
                && (m[0][1] - m[1][0].conj()).norm() <= HERMITIAN_TOLERANCE;
            if !(finite && hermitian) {
                return Err(Error::InvalidArgument(format!("spinor coupling at cell {i} is not Hermitian")));
            }
        }
        self.spinor_coupling = Some(coupling);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn spinor_coupling(&self) -> Option<&[Matrix2]> {
        self.spinor_coupling.as_deref()
    }

    /// Largest step with `max|V| dt / hbar <= 0.1` and `hbar k_max^2 dt / 2m <= 0.5`.
    pub fn default_dt(&self) -> f64 {
        let vmax = self.potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let kinetic: f64 = self
            .grid
            .wavenumbers()
            .iter()
            .zip(&self.masses)
            .map(|(k, m)| {
                let kmax = k.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                self.hbar * kmax * kmax / (2.0 * m)
            })
            .sum();
        let mut dt = 0.5 / kinetic.max(f64::MIN_POSITIVE);
        if vmax > 0.0 {
            dt = dt.min(0.1 * self.hbar / vmax);
        }
        dt
    }
}

/// Exact `exp(-i theta (v I + M))` for Hermitian `M`.
fn su2_exp(theta: f64, v: f64, m: &Matrix2) -> Matrix2 {
    let c0 = 0.5 * (m[0][0].re + m[1][1].re);
    let bz = 0.5 * (m[0][0].re - m[1][1].re);
    let off = 0.5 * (m[0][1] + m[1][0].conj());
    let b = (bz * bz + off.norm_sqr()).sqrt();
    let global = Complex64::from_polar(1.0, -theta * (v + c0));
    let cos = (b * theta).cos();
    // sin(b theta)/b, continuous at b = 0
    let sinc = if b * theta.abs() < 1e-8 { theta } else { (b * theta).sin() / b };
    let minus_i = Complex64::new(0.0, -1.0);
    [
        [
            global * (Complex64::new(cos, 0.0) + minus_i * sinc * bz),
            global * minus_i * sinc * off,
        ],
        [
            global * minus_i * sinc * off.conj(),
            global * (Complex64::new(cos, 0.0) - minus_i * sinc * bz),
        ],
    ]
}

enum Kick {
    Scalar(Vec<Complex64>),
    Spinor(Vec<Matrix2>),
}

/// Precomputed split-step factors for a fixed Hamiltonian and step size.
pub struct Propagator {
    spectral: Spectral,
    kick: Kick,
    drift: Vec<Complex64>,
    dt: f64,
}

impl Propagator {
    pub fn new(h: &Hamiltonian, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be finite and non-zero, got {dt}")));
        }
        let spectral = Spectral::new(&h.grid);
        let half = 0.5 * dt / h.hbar;
        let kick = match &h.spinor_coupling {
            None => Kick::Scalar(
                h.potential
                    .iter()
                    .map(|v| Complex64::from_polar(1.0, -v * half))
                    .collect(),
            ),
            Some(coupling) => Kick::Spinor(
                h.potential
                    .iter()
                    .zip(coupling)
                    .map(|(&v, m)| su2_exp(half, v, m))
                    .collect(),
            ),
        };
        let k = spectral.wavenumbers();
        let grid = &h.grid;
        let drift = (0..grid.cell_count())
            .map(|flat| {
                let idx = grid.multi_index(flat);
                let energy: f64 = idx
                    .iter()
                    .enumerate()
                    .map(|(d, &j)| h.hbar * h.hbar * k[d][j] * k[d][j] / (2.0 * h.masses[d]))
                    .sum();
                Complex64::from_polar(1.0, -energy * dt / h.hbar)
            })
            .collect();
        Ok(Self {
            spectral,
            kick,
            drift,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Grid {
        self.spectral.grid()
    }

    fn apply_kick(&self, psi: &mut Wavefunction) -> Result<()> {
        let n = psi.grid().cell_count();
        let components = psi.components();
        let values = psi.values_mut();
        match &self.kick {
            Kick::Scalar(phases) => {
                for c in 0..components {
                    for (z, p) in values[c * n..(c + 1) * n].iter_mut().zip(phases) {
                        *z *= p;
                    }
                }
            }
            Kick::Spinor(matrices) => {
                if components != 2 {
                    return Err(Error::ComponentMismatch { expected: 2, got: components });
                }
                let (up, down) = values.split_at_mut(n);
                for ((u, d), m) in up.iter_mut().zip(down.iter_mut()).zip(matrices) {
                    let (a, b) = (*u, *d);
                    *u = m[0][0] * a + m[0][1] * b;
                    *d = m[1][0] * a + m[1][1] * b;
                }
            }
        }
        Ok(())
    }

    fn apply_drift(&self, psi: &mut Wavefunction) {
        let n = psi.grid().cell_count();
        let components = psi.components();
        let values = psi.values_mut();
        for c in 0..components {
            let field = &mut values[c * n..(c + 1) * n];
            self.spectral.forward(field);
            for (z, p) in field.iter_mut().zip(&self.drift) {
                *z *= p;
            }
            self.spectral.inverse(field);
        }
    }

    /// Advances `psi` by one step in place.
    pub fn step_in_place(&self, psi: &mut Wavefunction) -> Result<()> {
        if psi.grid() != self.grid() {
            return Err(Error::GridMismatch("wavefunction and Hamiltonian grids differ".into()));
        }
        self.apply_kick(psi)?;
        self.apply_drift(psi);
        self.apply_kick(psi)?;
        if let Some(i) = psi.values().iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(format!("amplitude {i} after step at t = {}", psi.time())));
        }
        psi.set_time(psi.time() + self.dt);
        Ok(())
    }
}

/// One Strang step of size `dt`; negative `dt` runs the dynamics backwards.
pub fn step(psi: &Wavefunction, h: &Hamiltonian, dt: f64) -> Result<Wavefunction> {
    let propagator = Propagator::new(h, dt)?;
    let mut out = psi.clone();
    propagator.step_in_place(&mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Steps between stored snapshots.
    pub snapshot_every: usize,
    /// Abort when the edge mass of a snapshot exceeds this value.
    pub edge_mass_abort: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            snapshot_every: 1,
            edge_mass_abort: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub time: f64,
    pub norm: f64,
    pub edge_mass: f64,
    pub continuity_summary: f64,
}

/// Per-snapshot diagnostics. The continuity summary of a row is computed
/// over the single step ending at that snapshot; the initial row has none
/// and records 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvolutionLog {
    pub rows: Vec<LogRow>,
}

impl EvolutionLog {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.time).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.norm).collect()
    }

    /// Writes `time,norm,edge_mass,continuity_summary` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let rows = reader.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub snapshots: Vec<Wavefunction>,
    pub log: EvolutionLog,
}

/// Integer step count for `t_final / dt`, if it divides within 1e-9.
pub fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_final must be >= 0, got {t_final}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let steps = (t_final / dt).round();
    if (steps * dt - t_final).abs() > 1e-9 * t_final.max(1.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} does not divide t_final = {t_final}")));
    }
    Ok(steps as usize)
}

/// Evolves `psi` to `t_final` (relative to its time tag), storing a snapshot
/// every `snapshot_every` steps plus the final state.
pub fn evolve(psi: &Wavefunction, h: &Hamiltonian, t_final: f64, dt: f64, options: EvolveOptions) -> Result<Evolution> {
    if options.snapshot_every == 0 {
        return Err(Error::InvalidArgument("snapshot_every must be >= 1".into()));
    }
    let steps = step_count(t_final, dt)?;
    let t0 = psi.time();
    let spectral = Spectral::new(psi.grid());
    let mut log = EvolutionLog::default();
    let mut snapshots = vec![psi.clone()];
    record(&mut log, psi, 0.0, options)?;
    if steps == 0 {
        return Ok(Evolution { snapshots, log });
    }
    let propagator = Propagator::new(h, dt)?;
    let mut current = psi.clone();
    for i in 1..=steps {
        let take = i % options.snapshot_every == 0 || i == steps;
        let before = if take { Some(current.clone()) } else { None };
        propagator.step_in_place(&mut current)?;
        current.set_time(t0 + i as f64 * dt);
        if let Some(before) = before {
            let summary = residual_with(&spectral, &before, &current, h, dt)?.summary;
            record(&mut log, &current, summary, options)?;
            snapshots.push(current.clone());
        }
    }
    Ok(Evolution { snapshots, log })
}

fn record(log: &mut EvolutionLog, psi: &Wavefunction, summary: f64, options: EvolveOptions) -> Result<()> {
    let edge_mass = psi.edge_mass();
    if edge_mass > EDGE_MASS_WARNING {
        log::warn!("edge mass {edge_mass:.3e} at t = {}", psi.time());
    }
    if let Some(threshold) = options.edge_mass_abort {
        if edge_mass > threshold {
            return Err(Error::EdgeMass {
                time: psi.time(),
                edge_mass,
                threshold,
            });
        }
    }
    log.rows.push(LogRow {
        time: psi.time(),
        norm: psi.norm(),
        edge_mass,
        continuity_summary: summary,
    });
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ContinuityResidual {
    /// `(rho_after - rho_before)/dt + div(j_before + j_after)/2` per cell.
    pub field: Vec<f64>,
    /// `||r||_2 / ||(rho_before + rho_after)/2||_2`.
    pub summary: f64,
}

pub fn continuity_residual(before: &Wavefunction, after: &Wavefunction, h: &Hamiltonian, dt: f64) -> Result<ContinuityResidual> {
    residual_with(&Spectral::new(before.grid()), before, after, h, dt)
}

fn residual_with(spectral: &Spectral, before: &Wavefunction, after: &Wavefunction, h: &Hamiltonian, dt: f64) -> Result<ContinuityResidual> {
    before.check_compatible(after)?;
    if before.grid() != h.grid() {
        return Err(Error::GridMismatch("snapshots and Hamiltonian grids differ".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let rho_b = before.density();
    let rho_a = after.density();
    let j_b = before.current_with(spectral, h.masses(), h.hbar())?;
    let j_a = after.current_with(spectral, h.masses(), h.hbar())?;
    let j_mid: Vec<Vec<f64>> = j_b
        .iter()
        .zip(&j_a)
        .map(|(b, a)| b.iter().zip(a).map(|(x, y)| 0.5 * (x + y)).collect())
        .collect();
    let div = spectral.divergence(&j_mid);
    let field: Vec<f64> = rho_a
        .iter()
        .zip(&rho_b)
        .zip(&div)
        .map(|((a, b), d)| (a - b) / dt + d)
        .collect();
    let r2: f64 = field.iter().map(|r| r * r).sum();
    let m2: f64 = rho_a.iter().zip(&rho_b).map(|(a, b)| (0.5 * (a + b)).powi(2)).sum();
    let summary = if m2 > 0.0 { (r2 / m2).sqrt() } else { 0.0 };
    Ok(ContinuityResidual { field, summary })
}
