//! Multi-dimensional FFT over row-major grid fields, plus spectral derivatives.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

/// Planned forward/inverse transforms for every axis of a grid.
pub struct Spectral {
    grid: Grid,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    wavenumbers: Vec<Vec<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.points().iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = grid.points().iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            grid: grid.clone(),
            forward,
            inverse,
            wavenumbers: grid.wavenumbers(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumbers(&self) -> &[Vec<f64>] {
        &self.wavenumbers
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, field: &mut [Complex64]) {
        self.transform(field, &self.forward);
    }

    /// Inverse transform in place, scaled by `1/N` so that it undoes [`Self::forward`].
    pub fn inverse(&self, field: &mut [Complex64]) {
        self.transform(field, &self.inverse);
        let scale = 1.0 / self.grid.cell_count() as f64;
        field.iter_mut().for_each(|z| *z *= scale);
    }

    fn transform(&self, field: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(field.len(), self.grid.cell_count());
        let points = self.grid.points();
        let strides = self.grid.strides();
        let total = field.len();
        for (d, plan) in plans.iter().enumerate() {
            let n = points[d];
            let stride = strides[d];
            if stride == 1 {
                plan.process(field);
                continue;
            }
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let block = n * stride;
            for base in (0..total).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (j, z) in line.iter_mut().enumerate() {
                        *z = field[start + j * stride];
                    }
                    plan.process(&mut line);
                    for (j, z) in line.iter().enumerate() {
                        field[start + j * stride] = *z;
                    }
                }
            }
        }
    }

    /// Spectral partial derivative along `dim`. The Nyquist mode is dropped so
    /// that real fields have real derivatives.
    pub fn derivative(&self, field: &[Complex64], dim: usize) -> Vec<Complex64> {
        let mut work = field.to_vec();
        self.forward(&mut work);
        let n = self.grid.points()[dim];
        let stride = self.grid.strides()[dim];
        let k = &self.wavenumbers[dim];
        for (flat, z) in work.iter_mut().enumerate() {
            let j = (flat / stride) % n;
            if j == n / 2 {
                *z = Complex64::new(0.0, 0.0);
            } else {
                *z *= Complex64::new(0.0, k[j]);
            }
        }
        self.inverse(&mut work);
        work
    }

    /// Spectral divergence of a real vector field given per dimension.
    pub fn divergence(&self, field: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.cell_count()];
        for (d, component) in field.iter().enumerate() {
            let complex: Vec<Complex64> = component.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            for (o, z) in out.iter_mut().zip(self.derivative(&complex, d)) {
                *o += z.re;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn round_trip_2d() {
        let g = make_grid(&[(0.0, 1.0), (-2.0, 2.0)], &[16, 32]).unwrap();
        let s = Spectral::new(&g);
        let original: Vec<Complex64> = (0..g.cell_count())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut work = original.clone();
        s.forward(&mut work);
        s.inverse(&mut work);
        let scale = original.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in original.iter().zip(&work) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn derivative_of_sine_along_second_axis() {
        let g = make_grid(&[(0.0, 1.0), (0.0, 2.0 * std::f64::consts::PI)], &[8, 64]).unwrap();
        let s = Spectral::new(&g);
        let field: Vec<Complex64> = g.centers().map(|x| Complex64::new((3.0 * x[1]).sin(), 0.0)).collect();
        let d = s.derivative(&field, 1);
        for (x, z) in g.centers().zip(&d) {
            assert!((z.re - 3.0 * (3.0 * x[1]).cos()).abs() < 1e-12);
            assert!(z.im.abs() < 1e-12);
        }
        let d0 = s.derivative(&field, 0);
        assert!(d0.iter().all(|z| z.norm() < 1e-12));
    }
}
