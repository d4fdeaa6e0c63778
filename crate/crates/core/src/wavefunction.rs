//! Wavefunction container and the static measures derived from it.
//!
//! Amplitudes are stored component-major: component `c` occupies
//! `values[c * N .. (c + 1) * N]` in the grid's row-major cell order.
//! All integrals use the midpoint rule on cell centers.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::spectral::Spectral;

/// Outer shell fraction used by the edge-mass diagnostic.
pub const EDGE_SHELL_FRACTION: f64 = 0.05;

/// Edge mass above which a warning is logged.
pub const EDGE_MASS_WARNING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    grid: Grid,
    components: usize,
    values: Vec<Complex64>,
    time: f64,
}

impl Wavefunction {
    pub fn new(grid: Grid, components: usize, values: Vec<Complex64>, time: f64) -> Result<Self> {
        if components != 1 && components != 2 {
            return Err(Error::InvalidArgument(format!(
                "wavefunctions have 1 or 2 components, got {components}"
            )));
        }
        if values.len() != components * grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} components on {} cells",
                values.len(),
                components,
                grid.cell_count()
            )));
        }
        if let Some(i) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(format!("amplitude at index {i}")));
        }
        Ok(Self {
            grid,
            components,
            values,
            time,
        })
    }

    /// Scalar wavefunction sampled at cell centers.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let values = grid.centers().map(|x| f(&x)).collect();
        Self::new(grid.clone(), 1, values, 0.0)
    }

    /// Two-component wavefunction from its up and down fields.
    pub fn spinor(up: &Wavefunction, down: &Wavefunction) -> Result<Self> {
        if up.grid != down.grid {
            return Err(Error::GridMismatch("spinor components on different grids".into()));
        }
        if up.components != 1 || down.components != 1 {
            return Err(Error::ComponentMismatch {
                expected: 1,
                got: up.components.max(down.components),
            });
        }
        let mut values = up.values.clone();
        values.extend_from_slice(&down.values);
        Self::new(up.grid.clone(), 2, values, up.time)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let n = self.grid.cell_count();
        &self.values[c * n..(c + 1) * n]
    }

    /// Extracts one component as a scalar wavefunction.
    pub fn component_field(&self, c: usize) -> Wavefunction {
        Wavefunction {
            grid: self.grid.clone(),
            components: 1,
            values: self.component(c).to_vec(),
            time: self.time,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub(crate) fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn scaled(&self, c: Complex64) -> Wavefunction {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z *= c);
        out
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Result<Wavefunction> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVolume);
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    /// Per-cell density `sum_c |psi_c|^2`.
    pub fn density(&self) -> Vec<f64> {
        let n = self.grid.cell_count();
        let mut rho: Vec<f64> = self.component(0).iter().map(|z| z.norm_sqr()).collect();
        for c in 1..self.components {
            for (r, z) in rho.iter_mut().zip(&self.values[c * n..(c + 1) * n]) {
                *r += z.norm_sqr();
            }
        }
        rho
    }

    /// Probability current `(hbar/m_d) Im(psi* d_d psi)` per dimension, summed
    /// over components, using spectral derivatives.
    pub fn current(&self, masses: &[f64], hbar: f64) -> Result<Vec<Vec<f64>>> {
        self.current_with(&Spectral::new(&self.grid), masses, hbar)
    }

    pub fn current_with(&self, spectral: &Spectral, masses: &[f64], hbar: f64) -> Result<Vec<Vec<f64>>> {
        check_masses(masses, self.grid.dims())?;
        let n = self.grid.cell_count();
        let mut out = vec![vec![0.0; n]; self.grid.dims()];
        for c in 0..self.components {
            let psi = self.component(c);
            for (d, j) in out.iter_mut().enumerate() {
                let grad = spectral.derivative(psi, d);
                let factor = hbar / masses[d];
                for ((jj, p), g) in j.iter_mut().zip(psi).zip(&grad) {
                    *jj += factor * (p.conj() * g).im;
                }
            }
        }
        Ok(out)
    }

    /// Fraction of the world volume lying in the outer 5% shell of the box.
    pub fn edge_mass(&self) -> f64 {
        let total: f64 = self.density().iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let shell = self.grid.shell_mask(EDGE_SHELL_FRACTION);
        let edge: f64 = self
            .density()
            .iter()
            .zip(&shell)
            .filter(|(_, &s)| s)
            .map(|(r, _)| r)
            .sum();
        edge / total
    }

    pub(crate) fn check_compatible(&self, other: &Wavefunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("wavefunctions live on different grids".into()));
        }
        if self.components != other.components {
            return Err(Error::ComponentMismatch {
                expected: self.components,
                got: other.components,
            });
        }
        Ok(())
    }
}

pub(crate) fn check_masses(masses: &[f64], dims: usize) -> Result<()> {
    if masses.len() != dims {
        return Err(Error::DimensionMismatch(format!(
            "{} masses for {} coordinates",
            masses.len(),
            dims
        )));
    }
    for (dim, &mass) in masses.iter().enumerate() {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NonPositiveMass { dim, mass });
        }
    }
    Ok(())
}

/// A set of cells on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    grid: Grid,
    mask: Vec<bool>,
}

impl Region {
    pub fn new(grid: &Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.cell_count() {
            return Err(Error::GridMismatch(format!(
                "mask of length {} on {} cells",
                mask.len(),
                grid.cell_count()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            mask,
        })
    }

    pub fn full(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            mask: vec![true; grid.cell_count()],
        }
    }

    pub fn empty(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            mask: vec![false; grid.cell_count()],
        }
    }

    /// Cells whose center satisfies the predicate.
    pub fn from_predicate(grid: &Grid, pred: impl Fn(&[f64]) -> bool) -> Self {
        Self {
            grid: grid.clone(),
            mask: grid.centers().map(|x| pred(&x)).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.mask[flat]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union(&self, other: &Region) -> Result<Region> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Region) -> Result<Region> {
        self.combine(other, |a, b| a && b)
    }

    pub fn complement(&self) -> Region {
        Region {
            grid: self.grid.clone(),
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &Region) -> Result<bool> {
        Ok(self.intersection(other)?.is_empty())
    }

    fn combine(&self, other: &Region, op: impl Fn(bool, bool) -> bool) -> Result<Region> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("regions on different grids".into()));
        }
        Ok(Region {
            grid: self.grid.clone(),
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| op(a, b)).collect(),
        })
    }
}

/// World volume `mu(Q)`: midpoint quadrature of the density over the region.
pub fn world_volume(psi: &Wavefunction, region: &Region) -> Result<f64> {
    if psi.grid() != region.grid() {
        return Err(Error::GridMismatch("region and wavefunction grids differ".into()));
    }
    let sum: f64 = psi
        .density()
        .iter()
        .zip(region.mask())
        .filter(|(_, &m)| m)
        .map(|(r, _)| r)
        .sum();
    Ok(sum * psi.grid().cell_volume())
}

/// Fraction of the total world volume lying in the region.
pub fn probability(psi: &Wavefunction, region: &Region) -> Result<f64> {
    let total = world_volume(psi, &Region::full(psi.grid()))?;
    if total == 0.0 {
        return Err(Error::ZeroVolume);
    }
    Ok(world_volume(psi, region)? / total)
}

/// `<a|b>` summed over components.
pub fn inner_product(a: &Wavefunction, b: &Wavefunction) -> Result<Complex64> {
    a.check_compatible(b)?;
    let sum: Complex64 = a.values().iter().zip(b.values()).map(|(x, y)| x.conj() * y).sum();
    Ok(sum * a.grid().cell_volume())
}
