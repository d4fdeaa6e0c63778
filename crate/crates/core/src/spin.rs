//! Spin measurement with an idealized Stern-Gerlach transition.
//!
//! Spinor states on `X x Y` have two components (up, down); the pointer
//! coordinate is last, as in [`crate::measurement`].

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measurement::{born_weights, outer, pointer_factor, product_region, support_gap, MODEL_TOLERANCE, SETUP_TOLERANCE};
use crate::states::bump;
use crate::wavefunction::{world_volume, Region, Wavefunction};
use crate::worlds::WorldEnsemble;

#[derive(Debug, Clone)]
pub enum SpinSystem {
    /// `(alpha chi, beta chi)` with a scalar `chi`.
    Product { alpha: Complex64, beta: Complex64, chi: Wavefunction },
    /// Arbitrary `(psi_up, psi_down)`.
    Entangled { up: Wavefunction, down: Wavefunction },
}

impl SpinSystem {
    fn components(&self) -> Result<(Wavefunction, Wavefunction)> {
        match self {
            Self::Product { alpha, beta, chi } => Ok((chi.scaled(*alpha), chi.scaled(*beta))),
            Self::Entangled { up, down } => {
                if up.grid() != down.grid() {
                    return Err(Error::GridMismatch("spin components on different grids".into()));
                }
                Ok((up.clone(), down.clone()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpinSetup {
    up: Wavefunction,
    down: Wavefunction,
    pointer_initial: Wavefunction,
    pointer_up: Wavefunction,
    pointer_down: Wavefunction,
    supports: [Region; 2],
}

impl SpinSetup {
    pub fn new(system: SpinSystem, pointer_initial: Wavefunction, pointer_up: Wavefunction, pointer_down: Wavefunction) -> Result<Self> {
        let (up, down) = system.components()?;
        if up.components() != 1 || down.components() != 1 {
            return Err(Error::InvalidSetup("spin system fields must be scalar".into()));
        }
        let pointer_grid = pointer_initial.grid().clone();
        if pointer_grid.dims() != 1 {
            return Err(Error::InvalidSetup("pointer grid must be 1D".into()));
        }
        let norm0 = pointer_initial.norm();
        if !(norm0 > 0.0) {
            return Err(Error::InvalidSetup("initial pointer state has zero norm".into()));
        }
        for phi in [&pointer_up, &pointer_down] {
            if phi.grid() != &pointer_grid || phi.components() != 1 {
                return Err(Error::InvalidSetup("pointer states must share the pointer grid".into()));
            }
            if (phi.norm() - norm0).abs() > SETUP_TOLERANCE {
                return Err(Error::InvalidSetup("pointer states must have equal norms".into()));
            }
        }
        let support = |phi: &Wavefunction| Region::new(&pointer_grid, phi.values().iter().map(|z| z.norm_sqr() > 0.0).collect());
        let supports = [support(&pointer_up)?, support(&pointer_down)?];
        if support_gap(&supports)? < 1 {
            return Err(Error::InvalidSetup("pointer supports must be separated by at least one empty cell".into()));
        }
        Ok(Self { up, down, pointer_initial, pointer_up, pointer_down, supports })
    }

    /// Bump pointers of equal width centered at `initial`, `up` and `down`.
    pub fn with_bump_pointers(system: SpinSystem, pointer_grid: &Grid, initial: f64, up: f64, down: f64, width: f64) -> Result<Self> {
        Self::new(
            system,
            bump(pointer_grid, initial, width)?,
            bump(pointer_grid, up, width)?,
            bump(pointer_grid, down, width)?,
        )
    }

    pub fn system_grid(&self) -> &Grid {
        self.up.grid()
    }

    pub fn pointer_grid(&self) -> &Grid {
        self.pointer_initial.grid()
    }

    pub fn product_grid(&self) -> Result<Grid> {
        self.system_grid().product(self.pointer_grid())
    }

    pub fn system_up(&self) -> &Wavefunction {
        &self.up
    }

    pub fn system_down(&self) -> &Wavefunction {
        &self.down
    }

    pub fn pointer_states(&self) -> [&Wavefunction; 2] {
        [&self.pointer_up, &self.pointer_down]
    }

    /// `X x Y_up` (0) or `X x Y_down` (1).
    pub fn branch_region(&self, i: usize) -> Result<Region> {
        let support = self.supports.get(i).ok_or_else(|| Error::InvalidArgument(format!("no spin outcome {i}")))?;
        product_region(self.system_grid(), support)
    }
}

/// `(psi_up (x) phi_0, psi_down (x) phi_0)`.
pub fn spin_premeasurement(s: &SpinSetup) -> Result<Wavefunction> {
    let grid = s.product_grid()?;
    let mut values = outer(s.up.values(), &s.pointer_initial);
    values.extend(outer(s.down.values(), &s.pointer_initial));
    Wavefunction::new(grid, 2, values, 0.0)
}

/// `(psi_up (x) phi_0, psi_down (x) phi_0) -> (psi_up (x) phi_up, psi_down (x) phi_down)`.
pub fn stern_gerlach_measure(psi: &Wavefunction, s: &SpinSetup) -> Result<Wavefunction> {
    if psi.grid() != &s.product_grid()? {
        return Err(Error::GridMismatch("state is not on the setup's X x Y grid".into()));
    }
    if psi.components() != 2 {
        return Err(Error::ComponentMismatch { expected: 2, got: psi.components() });
    }
    let mut values = Vec::with_capacity(psi.values().len());
    let mut res = 0.0;
    let mut total = 0.0;
    for (c, phi) in [&s.pointer_up, &s.pointer_down].into_iter().enumerate() {
        let comp = psi.component(c);
        let r = pointer_factor(comp, &s.pointer_initial);
        let ny = s.pointer_initial.values().len();
        for (row, a) in comp.chunks(ny).zip(&r) {
            for (p, f) in row.iter().zip(s.pointer_initial.values()) {
                res += (p - a * f).norm_sqr();
                total += p.norm_sqr();
            }
        }
        values.extend(outer(&r, phi));
    }
    let residual = if total > 0.0 { (res / total).sqrt() } else { 0.0 };
    if residual > MODEL_TOLERANCE {
        return Err(Error::ModelViolation { residual });
    }
    Wavefunction::new(psi.grid().clone(), 2, values, psi.time())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinProbabilities {
    pub up: f64,
    pub down: f64,
    pub volume_up: f64,
    pub volume_down: f64,
    /// Fraction of the volume outside both pointer supports.
    pub escaped: f64,
}

/// Region-volume probabilities of `X x Y_up` and `X x Y_down` under the
/// summed spinor density.
pub fn spin_probabilities(psi_post: &Wavefunction, s: &SpinSetup) -> Result<SpinProbabilities> {
    if psi_post.grid() != &s.product_grid()? {
        return Err(Error::GridMismatch("state is not on the setup's X x Y grid".into()));
    }
    let total = world_volume(psi_post, &Region::full(psi_post.grid()))?;
    if total == 0.0 {
        return Err(Error::ZeroVolume);
    }
    let volume_up = world_volume(psi_post, &s.branch_region(0)?)?;
    let volume_down = world_volume(psi_post, &s.branch_region(1)?)?;
    Ok(SpinProbabilities {
        up: volume_up / total,
        down: volume_down / total,
        volume_up,
        volume_down,
        escaped: (1.0 - (volume_up + volume_down) / total).max(0.0),
    })
}

/// `(||psi_up||^2, ||psi_down||^2)` normalized by their sum.
pub fn spin_reference(s: &SpinSetup) -> Result<(f64, f64)> {
    let p = born_weights(&[
        Complex64::new(s.up.norm(), 0.0),
        Complex64::new(s.down.norm(), 0.0),
    ])?;
    Ok((p[0], p[1]))
}

/// Index 0 (up) or 1 (down) of the pointer support holding the world's
/// last coordinate.
pub fn spin_readout(world: &[f64], s: &SpinSetup) -> Result<Option<usize>> {
    let y = *world.last().ok_or_else(|| Error::DimensionMismatch("empty world".into()))?;
    let Some(cell) = s.pointer_grid().locate_cell(&[y])? else {
        return Ok(None);
    };
    Ok(s.supports.iter().position(|r| r.contains(cell[0])))
}

/// Fractions of alive worlds reading up and down.
pub fn spin_frequencies(ensemble: &WorldEnsemble, s: &SpinSetup) -> Result<(f64, f64)> {
    let mut counts = [0usize; 2];
    let mut alive = 0usize;
    for i in 0..ensemble.len() {
        if !ensemble.alive()[i] {
            continue;
        }
        alive += 1;
        if let Some(k) = spin_readout(ensemble.position(i), s)? {
            counts[k] += 1;
        }
    }
    if alive == 0 {
        return Err(Error::NoAliveWorlds);
    }
    Ok((counts[0] as f64 / alive as f64, counts[1] as f64 / alive as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpinReport {
    pub norm_up_sqr: f64,
    pub norm_down_sqr: f64,
    pub probabilities_volume: SpinProbabilities,
    pub probabilities_reference: (f64, f64),
    pub empirical_frequencies: Option<(f64, f64)>,
    pub worlds: Option<usize>,
}

impl SpinReport {
    pub fn new(s: &SpinSetup, p: SpinProbabilities, frequencies: Option<(f64, f64)>, worlds: Option<usize>) -> Result<Self> {
        Ok(Self {
            norm_up_sqr: s.up.norm_sqr(),
            norm_down_sqr: s.down.norm_sqr(),
            probabilities_volume: p,
            probabilities_reference: spin_reference(s)?,
            empirical_frequencies: frequencies,
            worlds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::states::gaussian;
    use crate::worlds::sample_worlds;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn grids() -> (Grid, Grid) {
        (make_grid(&[(-8.0, 8.0)], &[64]).unwrap(), make_grid(&[(-8.0, 8.0)], &[128]).unwrap())
    }

    fn product(alpha: Complex64, beta: Complex64) -> SpinSetup {
        let (gx, gy) = grids();
        let chi = gaussian(&gx, &[0.0], &[1.0], &[0.5]).unwrap();
        SpinSetup::with_bump_pointers(SpinSystem::Product { alpha, beta, chi }, &gy, 0.0, -4.0, 4.0, 3.0).unwrap()
    }

    fn measured(s: &SpinSetup) -> Wavefunction {
        stern_gerlach_measure(&spin_premeasurement(s).unwrap(), s).unwrap()
    }

    #[test]
    fn premeasurement_examples() {
        let psi = spin_premeasurement(&product(c(1.0, 0.0), c(0.0, 0.0))).unwrap();
        assert!(psi.component(1).iter().all(|z| z.norm() == 0.0));
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);

        let h = 0.5f64.sqrt();
        let psi = spin_premeasurement(&product(c(h, 0.0), c(0.0, h))).unwrap();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);

        let psi = spin_premeasurement(&product(c(h, 0.0), c(h, 0.0))).unwrap();
        assert_eq!(psi.component(0), psi.component(1));
    }

    #[test]
    fn stern_gerlach_examples() {
        let s = product(c(1.0, 0.0), c(0.0, 0.0));
        let post = measured(&s);
        let expected = outer(s.system_up().values(), &s.pointer_up);
        let diff = post.component(0).iter().zip(&expected).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
        assert!(post.component(1).iter().all(|z| z.norm() < 1e-15));

        let h = 0.5f64.sqrt();
        let s = product(c(h, 0.0), c(h, 0.0));
        let pre = spin_premeasurement(&s).unwrap();
        let post = stern_gerlach_measure(&pre, &s).unwrap();
        assert!((post.norm() - pre.norm()).abs() < 1e-10);
        let p = spin_probabilities(&post, &s).unwrap();
        assert!((p.volume_up - p.volume_down).abs() < 1e-10);
    }

    #[test]
    fn stern_gerlach_rejects_foreign_states() {
        let s = product(c(1.0, 0.0), c(1.0, 0.0));
        let g = s.product_grid().unwrap();
        let a = gaussian(&g, &[0.0, 4.0], &[1.0, 0.7], &[0.0, 0.0]).unwrap();
        let psi = Wavefunction::spinor(&a, &a).unwrap();
        assert!(matches!(stern_gerlach_measure(&psi, &s), Err(Error::ModelViolation { .. })));
    }

    #[test]
    fn probability_examples() {
        let s = product(c(0.25f64.sqrt(), 0.0), c(0.75f64.sqrt(), 0.0));
        let p = spin_probabilities(&measured(&s), &s).unwrap();
        assert!((p.up - 0.25).abs() < 1e-10 && (p.down - 0.75).abs() < 1e-10);
        assert!((p.up + p.down - 1.0).abs() < 1e-10);

        let s = product(c(1.0, 0.0), c(0.0, 0.0));
        let p = spin_probabilities(&measured(&s), &s).unwrap();
        assert!((p.up - 1.0).abs() < 1e-10 && p.down.abs() < 1e-10);
    }

    #[test]
    fn entangled_probabilities_follow_component_norms() {
        let (gx, gy) = grids();
        let up = gaussian(&gx, &[-1.0], &[0.8], &[1.0]).unwrap().scaled(c(0.4f64.sqrt(), 0.0));
        let down = gaussian(&gx, &[1.0], &[1.0], &[-0.5]).unwrap().scaled(c(0.0, 1.3));
        let s = SpinSetup::with_bump_pointers(SpinSystem::Entangled { up, down }, &gy, 0.0, -4.0, 4.0, 3.0).unwrap();
        let p = spin_probabilities(&measured(&s), &s).unwrap();
        let expected = 0.4 / (0.4 + 1.69);
        assert!((p.up - expected).abs() < 1e-10, "{} vs {expected}", p.up);
        let (ru, rd) = spin_reference(&s).unwrap();
        assert!((p.up - ru).abs() < 1e-8 && (p.down - rd).abs() < 1e-8);
    }

    #[test]
    fn probabilities_ignore_scale_and_relative_phase() {
        let s = product(c(0.6, 0.0), c(0.8, 0.0));
        let post = measured(&s);
        let p = spin_probabilities(&post, &s).unwrap();
        let q = spin_probabilities(&post.scaled(c(0.0, -3.0)), &s).unwrap();
        let s2 = product(c(0.6, 0.0), c(0.0, -0.8));
        let r = spin_probabilities(&measured(&s2), &s2).unwrap();
        assert!((p.up - q.up).abs() < 1e-12 && (p.up - r.up).abs() < 1e-12);
    }

    #[test]
    fn ensemble_frequencies_match() {
        let s = product(c(0.25f64.sqrt(), 0.0), c(0.75f64.sqrt(), 0.0));
        let e = sample_worlds(&measured(&s), 10_000, 17).unwrap();
        let (up, down) = spin_frequencies(&e, &s).unwrap();
        assert!((up - 0.25).abs() <= 0.02 && (down - 0.75).abs() <= 0.02, "{up} {down}");
    }

    #[test]
    fn overlapping_pointers_are_rejected() {
        let (gx, gy) = grids();
        let chi = gaussian(&gx, &[0.0], &[1.0], &[0.0]).unwrap();
        let system = SpinSystem::Product { alpha: c(1.0, 0.0), beta: c(0.0, 0.0), chi };
        assert!(SpinSetup::with_bump_pointers(system, &gy, 0.0, -1.0, 1.0, 3.0).is_err());
    }
}
