//! Projection of the configuration-space density onto physical space.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::wavefunction::{world_volume, Region, Wavefunction};

/// Assigns each configuration-space dimension to a `(particle, axis)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParticleLayout {
    assignments: Vec<(usize, usize)>,
    particles: usize,
    axes: usize,
}

impl ParticleLayout {
    /// Every particle must own each physical axis `0..A` exactly once.
    pub fn new(assignments: Vec<(usize, usize)>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::InvalidLayout("empty layout".into()));
        }
        let particles = assignments.iter().map(|a| a.0).max().unwrap() + 1;
        let axes = assignments.iter().map(|a| a.1).max().unwrap() + 1;
        if particles * axes != assignments.len() {
            return Err(Error::InvalidLayout(format!(
                "{} dimensions cannot cover {particles} particles x {axes} axes",
                assignments.len()
            )));
        }
        let mut seen = vec![false; particles * axes];
        for &(p, a) in &assignments {
            let slot = &mut seen[p * axes + a];
            if *slot {
                return Err(Error::InvalidLayout(format!("particle {p} axis {a} assigned twice")));
            }
            *slot = true;
        }
        Ok(Self { assignments, particles, axes })
    }

    /// `particles` particles in `axes` dimensions, stored particle-major.
    pub fn uniform(particles: usize, axes: usize) -> Result<Self> {
        Self::new((0..particles).flat_map(|p| (0..axes).map(move |a| (p, a))).collect())
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn axes(&self) -> usize {
        self.axes
    }

    /// Configuration dimension holding `axis` of `particle`.
    fn dim_of(&self, particle: usize, axis: usize) -> usize {
        self.assignments.iter().position(|&x| x == (particle, axis)).unwrap()
    }

    /// Physical-space grid, after checking all particles share congruent axes.
    pub fn physical_grid(&self, grid: &Grid) -> Result<Grid> {
        if grid.dims() != self.assignments.len() {
            return Err(Error::InvalidLayout(format!(
                "layout covers {} dimensions, grid has {}",
                self.assignments.len(),
                grid.dims()
            )));
        }
        for axis in 0..self.axes {
            let d0 = self.dim_of(0, axis);
            for p in 1..self.particles {
                let d = self.dim_of(p, axis);
                if grid.extent()[d] != grid.extent()[d0] || grid.points()[d] != grid.points()[d0] {
                    return Err(Error::InvalidLayout(format!("axis {axis} of particle {p} is not congruent with particle 0")));
                }
            }
        }
        let dims: Vec<usize> = (0..self.axes).map(|a| self.dim_of(0, a)).collect();
        grid.select(&dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDensity {
    pub grid: Grid,
    pub density: Vec<f64>,
}

impl ParticleDensity {
    /// CSV rows `x_1..x_A,density`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dims()).map(|d| format!("x_{d}")).collect();
        header.push("density".into());
        writer.write_record(&header)?;
        for (x, r) in self.grid.centers().zip(&self.density) {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(r.to_string());
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// `rho(x) = sum_k int dq delta(x - q_k) |psi(q)|^2`, with the delta realized
/// as binning onto the physical grid.
pub fn particle_density(psi: &Wavefunction, layout: &ParticleLayout) -> Result<ParticleDensity> {
    let grid = psi.grid();
    let physical = layout.physical_grid(grid)?;
    let rho = psi.density();
    let mut density = vec![0.0; physical.cell_count()];
    let other_volume = grid.cell_volume() / physical.cell_volume();
    for (flat, r) in rho.iter().enumerate() {
        if *r == 0.0 {
            continue;
        }
        let index = grid.multi_index(flat);
        for p in 0..layout.particles {
            let cell: Vec<usize> = (0..layout.axes).map(|a| index[layout.dim_of(p, a)]).collect();
            density[physical.flat_index(&cell)] += r * other_volume;
        }
    }
    Ok(ParticleDensity { grid: physical, density })
}

/// `<N>(X) = int_X rho(x) dx / mu(full)`.
pub fn expected_particle_count(psi: &Wavefunction, region: &Region, layout: &ParticleLayout) -> Result<f64> {
    let projected = particle_density(psi, layout)?;
    if region.grid() != &projected.grid {
        return Err(Error::GridMismatch("region is not on the physical grid".into()));
    }
    let total = world_volume(psi, &Region::full(psi.grid()))?;
    if total == 0.0 {
        return Err(Error::ZeroVolume);
    }
    let inside: f64 = projected
        .density
        .iter()
        .zip(region.mask())
        .filter(|(_, &m)| m)
        .map(|(r, _)| r)
        .sum();
    Ok(inside * projected.grid.cell_volume() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::states::{gaussian, superpose, tensor};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn axis() -> Grid {
        make_grid(&[(-10.0, 10.0)], &[64]).unwrap()
    }

    #[test]
    fn single_particle_projection_is_the_density() {
        let psi = gaussian(&axis(), &[1.0], &[1.2], &[0.3]).unwrap();
        let p = particle_density(&psi, &ParticleLayout::uniform(1, 1).unwrap()).unwrap();
        assert_eq!(p.density, psi.density());
    }

    /// Brute-force marginal over the second coordinate as the oracle.
    #[test]
    fn product_state_projects_to_sum_of_marginals() {
        let a = gaussian(&axis(), &[-3.0], &[0.8], &[0.0]).unwrap();
        let b = gaussian(&axis(), &[2.0], &[1.0], &[1.0]).unwrap();
        let psi = tensor(&a, &b).unwrap();
        let p = particle_density(&psi, &ParticleLayout::uniform(2, 1).unwrap()).unwrap();
        let dx = 20.0 / 64.0;
        let rho = psi.density();
        for i in 0..64 {
            let m1: f64 = (0..64).map(|j| rho[i * 64 + j]).sum::<f64>() * dx;
            let m2: f64 = (0..64).map(|j| rho[j * 64 + i]).sum::<f64>() * dx;
            assert!((p.density[i] - (m1 + m2)).abs() < 1e-14);
            let analytic = a.values()[i].norm_sqr() + b.values()[i].norm_sqr();
            assert!((p.density[i] - analytic).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_state_projects_symmetrically() {
        let a = gaussian(&axis(), &[-3.0], &[1.0], &[0.0]).unwrap();
        let b = gaussian(&axis(), &[2.0], &[0.8], &[0.0]).unwrap();
        let ab = tensor(&a, &b).unwrap();
        let ba = tensor(&b, &a).unwrap();
        let sym = superpose(&[(Complex64::new(1.0, 0.0), ab), (Complex64::new(1.0, 0.0), ba)]).unwrap();
        let swapped = ParticleLayout::new(vec![(1, 0), (0, 0)]).unwrap();
        let p = particle_density(&sym, &ParticleLayout::uniform(2, 1).unwrap()).unwrap();
        let q = particle_density(&sym, &swapped).unwrap();
        for (x, y) in p.density.iter().zip(&q.density) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn particle_count_examples() {
        let a = gaussian(&axis(), &[-5.0], &[0.7], &[0.0]).unwrap();
        let b = gaussian(&axis(), &[5.0], &[0.7], &[0.0]).unwrap();
        let psi = tensor(&a, &b).unwrap().scaled(Complex64::new(3.0, 0.0));
        let layout = ParticleLayout::uniform(2, 1).unwrap();
        let g = axis();
        let full = expected_particle_count(&psi, &Region::full(&g), &layout).unwrap();
        assert!((full - 2.0).abs() < 1e-10);
        assert_eq!(expected_particle_count(&psi, &Region::empty(&g), &layout).unwrap(), 0.0);
        let left = Region::from_predicate(&g, |x| x[0] < 0.0);
        assert!((expected_particle_count(&psi, &left, &layout).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn layout_validation() {
        assert!(ParticleLayout::new(vec![(0, 0), (0, 0)]).is_err());
        assert!(ParticleLayout::new(vec![(0, 0), (1, 1)]).is_err());
        let g = make_grid(&[(-10.0, 10.0), (-5.0, 5.0)], &[64, 64]).unwrap();
        let psi = gaussian(&g, &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(
            particle_density(&psi, &ParticleLayout::uniform(2, 1).unwrap()),
            Err(Error::InvalidLayout(_))
        ));
        assert!(particle_density(&psi, &ParticleLayout::uniform(1, 2).unwrap()).is_ok());
    }

    #[test]
    fn csv_has_coordinate_and_density_columns() {
        let psi = gaussian(&make_grid(&[(0.0, 8.0)], &[8]).unwrap(), &[4.0], &[1.0], &[0.0]).unwrap();
        let p = particle_density(&psi, &ParticleLayout::uniform(1, 1).unwrap()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_1,density\n0.5,"));
        assert_eq!(text.lines().count(), 9);
    }

    proptest! {
        #[test]
        fn counts_are_additive_and_density_nonnegative(c1 in -6.0..6.0f64, c2 in -6.0..6.0f64, split in 1usize..63) {
            let g = axis();
            let psi = tensor(
                &gaussian(&g, &[c1], &[1.0], &[0.5]).unwrap(),
                &gaussian(&g, &[c2], &[1.3], &[-0.2]).unwrap(),
            ).unwrap();
            let layout = ParticleLayout::uniform(2, 1).unwrap();
            let p = particle_density(&psi, &layout).unwrap();
            prop_assert!(p.density.iter().all(|&r| r >= 0.0));
            let left = Region::new(&g, (0..64).map(|i| i < split).collect()).unwrap();
            let right = left.complement();
            let total = expected_particle_count(&psi, &left, &layout).unwrap()
                + expected_particle_count(&psi, &right, &layout).unwrap();
            prop_assert!((total - 2.0).abs() < 1e-10);
        }
    }
}
