//! The continuum of worlds at Monte-Carlo resolution.
//!
//! Worlds are sampled from `|psi|^2` and carried along the velocity field
//! `v = j / rho`. Where `rho` drops below [`NODE_THRESHOLD`] times the
//! maximum cell density the velocity is undefined; a world that reaches such
//! a point is frozen and marked not alive.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::substream;
use crate::spectral::Spectral;
use crate::wavefunction::{check_masses, Wavefunction};

/// Relative density below which the velocity field is masked.
pub const NODE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct VelocityField {
    grid: Grid,
    velocity: Vec<Vec<f64>>,
    density: Vec<f64>,
    valid: Vec<bool>,
    threshold: f64,
    time: f64,
}

impl VelocityField {
    fn from_parts(grid: &Grid, velocity: Vec<Vec<f64>>, density: Vec<f64>, valid: Vec<bool>, threshold: f64, time: f64) -> Self {
        Self {
            grid: grid.clone(),
            velocity,
            density,
            valid,
            threshold,
            time,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Velocity per dimension; entries outside the validity mask are zero.
    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Absolute density threshold of the mask.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// True when no cell carries a defined velocity.
    pub fn is_vanishing(&self) -> bool {
        !self.valid.iter().any(|&v| v)
    }

    /// Largest componentwise difference over cells valid in both fields.
    pub fn max_difference(&self, other: &VelocityField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("velocity fields on different grids".into()));
        }
        let mut worst = 0.0f64;
        for (a, b) in self.velocity.iter().zip(&other.velocity) {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                if self.valid[i] && other.valid[i] {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Multilinear interpolation at a (wrapped) point. Masked corners are
    /// dropped and the remaining weights renormalized. Returns the
    /// interpolated velocity and density, or `None` at a node.
    pub fn interpolate(&self, q: &[f64]) -> Option<(Vec<f64>, f64)> {
        let dims = self.grid.dims();
        let points = self.grid.points();
        let mut base = Vec::with_capacity(dims);
        let mut frac = Vec::with_capacity(dims);
        for d in 0..dims {
            let u = (q[d] - self.grid.extent()[d].0) / self.grid.spacing()[d] - 0.5;
            let i0 = u.floor();
            frac.push(u - i0);
            base.push((i0 as i64).rem_euclid(points[d] as i64) as usize);
        }
        let strides = self.grid.strides();
        let mut v = vec![0.0; dims];
        let mut rho = 0.0;
        let mut wsum = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut flat = 0;
            for d in 0..dims {
                let up = (corner >> d) & 1 == 1;
                let i = if up { (base[d] + 1) % points[d] } else { base[d] };
                w *= if up { frac[d] } else { 1.0 - frac[d] };
                flat += i * strides[d];
            }
            rho += w * self.density[flat];
            if self.valid[flat] && w > 0.0 {
                wsum += w;
                for (vd, field) in v.iter_mut().zip(&self.velocity) {
                    *vd += w * field[flat];
                }
            }
        }
        if wsum <= 0.0 || rho < self.threshold {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= wsum);
        Some((v, rho))
    }
}

fn mask_for(density: &[f64]) -> (Vec<bool>, f64) {
    let max = density.iter().fold(0.0f64, |m, &r| m.max(r));
    let threshold = NODE_THRESHOLD * max;
    let valid = density.iter().map(|&r| max > 0.0 && r > threshold).collect();
    (valid, threshold)
}

/// `v = j / rho` on cells where `rho > NODE_THRESHOLD * max(rho)`.
pub fn velocity_field(psi: &Wavefunction, masses: &[f64], hbar: f64) -> Result<VelocityField> {
    velocity_field_with(&Spectral::new(psi.grid()), psi, masses, hbar)
}

fn velocity_field_with(spectral: &Spectral, psi: &Wavefunction, masses: &[f64], hbar: f64) -> Result<VelocityField> {
    let current = psi.current_with(spectral, masses, hbar)?;
    let density = psi.density();
    let (valid, threshold) = mask_for(&density);
    let velocity = current
        .into_iter()
        .map(|j| {
            j.iter()
                .zip(&density)
                .zip(&valid)
                .map(|((j, r), &ok)| if ok { j / r } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(VelocityField::from_parts(psi.grid(), velocity, density, valid, threshold, psi.time()))
}

/// Half-width of the finite-difference stencil used on phase samples.
const STENCIL_REACH: usize = 4;

/// First-derivative weights at `z` for the nodes `x` (Fornberg's recursion).
fn derivative_weights(z: f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    for i in 1..n {
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                c[i][1] = c1 * (c[i - 1][0] - c5 * c[i - 1][1]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            c[j][1] = (c4 * c[j][1] - c[j][0]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

/// Derivative of samples `s` at position `i` from a stencil of up to
/// `2 * STENCIL_REACH + 1` points inside `0..s.len()`, centered where it fits
/// and shifted inward near the ends.
fn segment_derivative(s: &[f64], i: usize, h: f64) -> f64 {
    let width = s.len().min(2 * STENCIL_REACH + 1);
    let start = i.saturating_sub(STENCIL_REACH).min(s.len() - width);
    let nodes: Vec<f64> = (start..start + width).map(|j| j as f64 - i as f64).collect();
    derivative_weights(0.0, &nodes)
        .iter()
        .zip(&s[start..start + width])
        .map(|(w, v)| w * v)
        .sum::<f64>()
        / h
}

/// Velocity from the gradient of the unwrapped phase, `v = (hbar/m) dS/dx`
/// with `S = arg psi`. One-dimensional scalar states only. Each connected
/// run of valid cells is unwrapped independently; isolated single cells are
/// masked.
pub fn velocity_from_phase(psi: &Wavefunction, masses: &[f64], hbar: f64) -> Result<VelocityField> {
    let grid = psi.grid();
    if grid.dims() != 1 {
        return Err(Error::DimensionMismatch("phase unwrapping is defined for 1D states only".into()));
    }
    if psi.components() != 1 {
        return Err(Error::ComponentMismatch { expected: 1, got: psi.components() });
    }
    check_masses(masses, 1)?;
    let n = grid.cell_count();
    let h = grid.spacing()[0];
    let values = psi.values();
    let density = psi.density();
    let (mut valid, threshold) = mask_for(&density);
    let mut velocity = vec![0.0; n];
    let factor = hbar / masses[0];

    if valid.iter().all(|&v| v) {
        // periodic support: unwrap around the ring and extend by the winding
        let mut phase = vec![values[0].arg()];
        for i in 1..n {
            let step = (values[i] * values[i - 1].conj()).arg();
            phase.push(phase[i - 1] + step);
        }
        let closing = phase[n - 1] + (values[0] * values[n - 1].conj()).arg() - phase[0];
        let pad = STENCIL_REACH;
        let extended: Vec<f64> = (0..n + 2 * pad)
            .map(|j| {
                let k = j as i64 - pad as i64;
                let wraps = k.div_euclid(n as i64);
                phase[k.rem_euclid(n as i64) as usize] + closing * wraps as f64
            })
            .collect();
        for (i, v) in velocity.iter_mut().enumerate() {
            *v = factor * segment_derivative(&extended, i + pad, h);
        }
    } else {
        let start = valid.iter().position(|&v| !v).unwrap_or(0);
        let order: Vec<usize> = (0..n).map(|k| (start + k) % n).collect();
        let mut k = 0;
        while k < n {
            if !valid[order[k]] {
                k += 1;
                continue;
            }
            let mut cells = vec![order[k]];
            while k + 1 < n && valid[order[k + 1]] {
                k += 1;
                cells.push(order[k]);
            }
            k += 1;
            if cells.len() == 1 {
                valid[cells[0]] = false;
                continue;
            }
            let mut phase = vec![values[cells[0]].arg()];
            for w in cells.windows(2) {
                let step = (values[w[1]] * values[w[0]].conj()).arg();
                phase.push(phase.last().unwrap() + step);
            }
            for (m, &cell) in cells.iter().enumerate() {
                velocity[cell] = factor * segment_derivative(&phase, m, h);
            }
        }
    }
    Ok(VelocityField::from_parts(grid, vec![velocity], density, valid, threshold, psi.time()))
}

/// Sampled configurations. Positions are kept both wrapped into the box and
/// unwrapped (continuous across periodic boundaries).
#[derive(Debug, Clone, PartialEq)]
pub struct WorldEnsemble {
    dims: usize,
    positions: Vec<f64>,
    unwrapped: Vec<f64>,
    ids: Vec<u64>,
    alive: Vec<bool>,
    birth_time: f64,
    time: f64,
    seed: u64,
}

impl WorldEnsemble {
    /// Ensemble from explicit points (already inside the box), labelled `0..M`.
    pub fn from_points(points: &[Vec<f64>], time: f64, seed: u64) -> Result<Self> {
        let dims = points.first().map(|p| p.len()).ok_or_else(|| Error::InvalidArgument("ensemble needs at least one world".into()))?;
        if points.iter().any(|p| p.len() != dims) {
            return Err(Error::DimensionMismatch("worlds of different dimension".into()));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("world position".into()));
        }
        let positions: Vec<f64> = points.iter().flatten().copied().collect();
        Ok(Self {
            dims,
            unwrapped: positions.clone(),
            positions,
            ids: (0..points.len() as u64).collect(),
            alive: vec![true; points.len()],
            birth_time: time,
            time,
            seed,
        })
    }

    pub(crate) fn from_raw(dims: usize, ids: Vec<u64>, positions: Vec<f64>, unwrapped: Vec<f64>, alive: Vec<bool>, birth_time: f64, time: f64, seed: u64) -> Result<Self> {
        let m = ids.len();
        if m == 0 || positions.len() != m * dims || unwrapped.len() != m * dims || alive.len() != m {
            return Err(Error::InvalidArgument("inconsistent ensemble arrays".into()));
        }
        Ok(Self { dims, positions, unwrapped, ids, alive, birth_time, time, seed })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dims..(i + 1) * self.dims]
    }

    pub fn unwrapped(&self, i: usize) -> &[f64] {
        &self.unwrapped[i * self.dims..(i + 1) * self.dims]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn unwrapped_positions(&self) -> &[f64] {
        &self.unwrapped
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn birth_time(&self) -> f64 {
        self.birth_time
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replaces one coordinate of world `i`, used when a measurement
    /// transition redraws the pointer coordinate.
    pub(crate) fn set_coordinate(&mut self, i: usize, dim: usize, value: f64) {
        self.positions[i * self.dims + dim] = value;
        self.unwrapped[i * self.dims + dim] = value;
    }
}

/// Inverse-CDF sampler over grid cells with uniform in-cell jitter.
pub(crate) struct CellSampler<'a> {
    grid: &'a Grid,
    cumulative: Vec<f64>,
}

impl<'a> CellSampler<'a> {
    pub(crate) fn new(grid: &'a Grid, density: &[f64]) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(density.len());
        let mut total = 0.0;
        for r in density {
            total += r;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::ZeroVolume);
        }
        Ok(Self { grid, cumulative })
    }

    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let total = *self.cumulative.last().unwrap();
        let u: f64 = rng.random::<f64>() * total;
        let cell = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        let grid = self.grid;
        grid.multi_index(cell)
            .iter()
            .enumerate()
            .map(|(d, &i)| {
                let x = grid.extent()[d].0 + (i as f64 + rng.random::<f64>()) * grid.spacing()[d];
                grid.wrap(d, x)
            })
            .collect()
    }
}

/// Draws `count` i.i.d. worlds from the cell distribution proportional to
/// `|psi|^2`, each jittered uniformly inside its cell.
pub fn sample_worlds(psi: &Wavefunction, count: usize, seed: u64) -> Result<WorldEnsemble> {
    sample_worlds_on(psi, count, seed, "sample")
}

/// [`sample_worlds`] on the named random substream of `seed`.
pub fn sample_worlds_on(psi: &Wavefunction, count: usize, seed: u64, stream: &str) -> Result<WorldEnsemble> {
    if count == 0 {
        return Err(Error::InvalidArgument("at least one world is required".into()));
    }
    let sampler = CellSampler::new(psi.grid(), &psi.density())?;
    let mut rng = substream(seed, stream);
    let points: Vec<Vec<f64>> = (0..count).map(|_| sampler.draw(&mut rng)).collect();
    WorldEnsemble::from_points(&points, psi.time(), seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvanceOptions {
    /// RK4 step; defaults to a quarter of the snapshot cadence.
    pub dt_world: Option<f64>,
    /// Record positions every this many snapshots (plus the last one).
    pub record_every: usize,
}

impl Default for AdvanceOptions {
    fn default() -> Self {
        Self {
            dt_world: None,
            record_every: 1,
        }
    }
}

/// Positions of every world at the recorded times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub dims: usize,
    pub ids: Vec<u64>,
    pub times: Vec<f64>,
    /// One `M x D` block per recorded time, wrapped into the box.
    pub positions: Vec<Vec<f64>>,
    pub unwrapped: Vec<Vec<f64>>,
    pub alive: Vec<Vec<bool>>,
}

impl TrajectoryRecord {
    fn push(&mut self, e: &WorldEnsemble) {
        self.times.push(e.time);
        self.positions.push(e.positions.clone());
        self.unwrapped.push(e.unwrapped.clone());
        self.alive.push(e.alive.clone());
    }

    /// CSV rows `world_id,t,q_1..q_D,alive,u_1..u_D`, grouped by world.
    /// `q` is the position in the box and `u` the unwrapped position.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        let mut header = vec!["world_id".to_string(), "t".to_string()];
        header.extend((1..=self.dims).map(|d| format!("q_{d}")));
        header.push("alive".into());
        header.extend((1..=self.dims).map(|d| format!("u_{d}")));
        writer.write_record(&header)?;
        let dims = self.dims;
        for (i, id) in self.ids.iter().enumerate() {
            for (k, t) in self.times.iter().enumerate() {
                let mut row = vec![id.to_string(), t.to_string()];
                row.extend(self.positions[k][i * dims..(i + 1) * dims].iter().map(|x| x.to_string()));
                row.push(if self.alive[k][i] { "1" } else { "0" }.into());
                row.extend(self.unwrapped[k][i * dims..(i + 1) * dims].iter().map(|x| x.to_string()));
                writer.write_record(&row)?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdvanceStats {
    /// Worlds frozen at a node during this call.
    pub frozen: usize,
    /// 1D only: adjacent alive worlds found out of order after a step.
    pub ordering_violations: usize,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Advance {
    pub ensemble: WorldEnsemble,
    pub record: TrajectoryRecord,
    pub stats: AdvanceStats,
}

/// Velocity at a wrapped point, linear in time between two fields.
fn velocity_between(a: &VelocityField, b: &VelocityField, tau: f64, q: &[f64]) -> Option<Vec<f64>> {
    if tau <= 0.0 {
        return a.interpolate(q).map(|(v, _)| v);
    }
    if tau >= 1.0 {
        return b.interpolate(q).map(|(v, _)| v);
    }
    let (va, ra) = a.interpolate(q)?;
    let (vb, rb) = b.interpolate(q)?;
    let rho = (1.0 - tau) * ra + tau * rb;
    if rho < (1.0 - tau) * a.threshold + tau * b.threshold {
        return None;
    }
    Some(va.iter().zip(&vb).map(|(x, y)| (1.0 - tau) * x + tau * y).collect())
}

/// One classical RK4 step on the unwrapped position; `None` if any stage
/// lands on a node.
fn rk4(grid: &Grid, a: &VelocityField, b: &VelocityField, tau0: f64, dtau: f64, h: f64, p: &[f64]) -> Option<Vec<f64>> {
    let wrap = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(d, &v)| grid.wrap(d, v)).collect() };
    let shift = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + s * k).collect() };
    let k1 = velocity_between(a, b, tau0, &wrap(p))?;
    let k2 = velocity_between(a, b, tau0 + 0.5 * dtau, &wrap(&shift(p, &k1, 0.5 * h)))?;
    let k3 = velocity_between(a, b, tau0 + 0.5 * dtau, &wrap(&shift(p, &k2, 0.5 * h)))?;
    let k4 = velocity_between(a, b, tau0 + dtau, &wrap(&shift(p, &k3, h)))?;
    Some(
        p.iter()
            .enumerate()
            .map(|(d, x)| x + h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]))
            .collect(),
    )
}

/// Transports the ensemble through a uniformly spaced snapshot sequence by
/// integrating `dq/dt = j/rho` with fixed-step RK4, interpolating the
/// velocity multilinearly in space and linearly in time.
pub fn advance_worlds(ensemble: &WorldEnsemble, snapshots: &[Wavefunction], masses: &[f64], hbar: f64, options: AdvanceOptions) -> Result<Advance> {
    let first = snapshots.first().ok_or_else(|| Error::CadenceMismatch("empty snapshot list".into()))?;
    let grid = first.grid().clone();
    if ensemble.dims != grid.dims() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble has {} coordinates, snapshots {}",
            ensemble.dims,
            grid.dims()
        )));
    }
    if options.record_every == 0 {
        return Err(Error::InvalidArgument("record_every must be >= 1".into()));
    }
    let t0 = first.time();
    if (ensemble.time - t0).abs() > 1e-9 * t0.abs().max(1.0) {
        return Err(Error::CadenceMismatch(format!(
            "ensemble at t = {} but first snapshot at t = {t0}",
            ensemble.time
        )));
    }
    let mut out = ensemble.clone();
    let mut record = TrajectoryRecord {
        dims: grid.dims(),
        ids: ensemble.ids.clone(),
        ..Default::default()
    };
    record.push(&out);
    let mut stats = AdvanceStats::default();
    if snapshots.len() == 1 {
        return Ok(Advance { ensemble: out, record, stats });
    }

    let cadence = snapshots[1].time() - t0;
    if !(cadence > 0.0) {
        return Err(Error::CadenceMismatch("snapshot times must increase".into()));
    }
    for (i, s) in snapshots.iter().enumerate() {
        if s.grid() != &grid {
            return Err(Error::GridMismatch("snapshots on different grids".into()));
        }
        let expected = t0 + i as f64 * cadence;
        if (s.time() - expected).abs() > 1e-9 * cadence.max(1.0) * (i as f64).max(1.0) {
            return Err(Error::CadenceMismatch(format!(
                "snapshot {i} at t = {} but expected {expected}",
                s.time()
            )));
        }
    }
    let dt_world = options.dt_world.unwrap_or(cadence / 4.0);
    let substeps = (cadence / dt_world).round();
    if !(dt_world > 0.0) || substeps < 1.0 || (substeps * dt_world - cadence).abs() > 1e-9 * cadence {
        return Err(Error::CadenceMismatch(format!(
            "dt_world = {dt_world} does not divide the snapshot cadence {cadence}"
        )));
    }
    let substeps = substeps as usize;
    let h = cadence / substeps as f64;
    let dtau = 1.0 / substeps as f64;

    let spectral = Spectral::new(&grid);
    let fields = snapshots
        .iter()
        .map(|s| velocity_field_with(&spectral, s, masses, hbar))
        .collect::<Result<Vec<_>>>()?;

    let dims = grid.dims();
    let order: Option<Vec<usize>> = (dims == 1).then(|| {
        let mut idx: Vec<usize> = (0..out.len()).collect();
        idx.sort_by(|&a, &b| out.unwrapped[a].total_cmp(&out.unwrapped[b]));
        idx
    });

    for s in 0..snapshots.len() - 1 {
        let (a, b) = (&fields[s], &fields[s + 1]);
        for sub in 0..substeps {
            let tau0 = sub as f64 * dtau;
            let results: Vec<Option<Vec<f64>>> = out
                .unwrapped
                .par_chunks(dims)
                .zip(out.alive.par_iter())
                .map(|(p, &alive)| if alive { rk4(&grid, a, b, tau0, dtau, h, p) } else { None })
                .collect();
            for (i, r) in results.into_iter().enumerate() {
                if !out.alive[i] {
                    continue;
                }
                match r {
                    Some(p) => {
                        for d in 0..dims {
                            out.unwrapped[i * dims + d] = p[d];
                            out.positions[i * dims + d] = grid.wrap(d, p[d]);
                        }
                    }
                    None => {
                        out.alive[i] = false;
                        stats.frozen += 1;
                    }
                }
            }
            stats.steps += 1;
            if let Some(order) = &order {
                let mut last: Option<f64> = None;
                for &i in order {
                    if !out.alive[i] {
                        continue;
                    }
                    let x = out.unwrapped[i];
                    if let Some(prev) = last {
                        if x <= prev {
                            stats.ordering_violations += 1;
                        }
                    }
                    last = Some(x);
                }
            }
        }
        out.time = snapshots[s + 1].time();
        if (s + 1) % options.record_every == 0 || s + 2 == snapshots.len() {
            record.push(&out);
        }
    }
    if stats.frozen > 0 {
        log::warn!("{} worlds frozen at nodes", stats.frozen);
    }
    Ok(Advance { ensemble: out, record, stats })
}

/// Total-variation distance between the binned alive-world histogram and the
/// binned distribution `|psi|^2`, with `bins` equal bins per dimension.
pub fn equivariance_distance(ensemble: &WorldEnsemble, psi: &Wavefunction, bins: usize) -> Result<f64> {
    let grid = psi.grid();
    if ensemble.dims != grid.dims() {
        return Err(Error::DimensionMismatch("ensemble and wavefunction dimensions differ".into()));
    }
    if bins == 0 || grid.points().iter().any(|&n| n % bins != 0) {
        return Err(Error::InvalidArgument(format!("{bins} bins do not divide the grid")));
    }
    let dims = grid.dims();
    let bin_of = |index: &[usize]| -> usize {
        index
            .iter()
            .zip(grid.points())
            .fold(0, |acc, (&i, &n)| acc * bins + i / (n / bins))
    };
    let total_bins = bins.pow(dims as u32);
    let mut exact = vec![0.0; total_bins];
    let density = psi.density();
    let total: f64 = density.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroVolume);
    }
    for (flat, r) in density.iter().enumerate() {
        exact[bin_of(&grid.multi_index(flat))] += r / total;
    }
    let mut counts = vec![0usize; total_bins];
    let mut alive = 0usize;
    for i in 0..ensemble.len() {
        if !ensemble.alive[i] {
            continue;
        }
        let q: Vec<f64> = ensemble.position(i).iter().enumerate().map(|(d, &x)| grid.wrap(d, x)).collect();
        if let Some(index) = grid.locate_cell(&q)? {
            counts[bin_of(&index)] += 1;
            alive += 1;
        }
    }
    if alive == 0 {
        return Err(Error::NoAliveWorlds);
    }
    Ok(0.5
        * exact
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (c as f64 / alive as f64 - p).abs())
            .sum::<f64>())
}
