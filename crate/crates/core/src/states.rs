//! Parameterized initial states.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::wavefunction::{inner_product, Wavefunction};

fn check_len(grid: &Grid, name: &str, v: &[f64]) -> Result<()> {
    if v.len() != grid.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} entries, grid has {} dimensions",
            v.len(),
            grid.dims()
        )));
    }
    Ok(())
}

/// Product Gaussian `prod_d (2 pi s_d^2)^(-1/4) exp(-(x-c)^2 / 4 s_d^2 + i k_d x)`.
///
/// `width` is the standard deviation of the density `|psi|^2`. The prefactor
/// normalizes the state on the real line.
pub fn gaussian(grid: &Grid, center: &[f64], width: &[f64], boost: &[f64]) -> Result<Wavefunction> {
    check_len(grid, "center", center)?;
    check_len(grid, "width", width)?;
    check_len(grid, "boost", boost)?;
    if width.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("gaussian width must be positive".into()));
    }
    Wavefunction::from_fn(grid, |x| {
        let mut log_amp = 0.0;
        let mut phase = 0.0;
        for d in 0..x.len() {
            let s = width[d];
            log_amp += -0.25 * (2.0 * PI * s * s).ln() - (x[d] - center[d]).powi(2) / (4.0 * s * s);
            phase += boost[d] * x[d];
        }
        Complex64::from_polar(log_amp.exp(), phase)
    })
}

/// Plane wave `exp(i k.x)` normalized to the box volume.
pub fn plane_wave(grid: &Grid, k: &[f64]) -> Result<Wavefunction> {
    check_len(grid, "k", k)?;
    let amp = 1.0 / grid.lengths().iter().product::<f64>().sqrt();
    Wavefunction::from_fn(grid, |x| {
        let phase: f64 = x.iter().zip(k).map(|(a, b)| a * b).sum();
        Complex64::from_polar(amp, phase)
    })
}

/// Plane wave with integer mode numbers, periodic on the box.
pub fn grid_plane_wave(grid: &Grid, modes: &[i64]) -> Result<Wavefunction> {
    let k: Vec<f64> = modes
        .iter()
        .zip(grid.lengths())
        .map(|(&m, l)| 2.0 * PI * m as f64 / l)
        .collect();
    plane_wave(grid, &k)
}

/// Harmonic-oscillator eigenfunctions `0..count` on a 1D grid, by the
/// normalized Hermite recurrence.
pub fn hermite_functions(grid: &Grid, count: usize, omega: f64, mass: f64, hbar: f64, center: f64) -> Result<Vec<Wavefunction>> {
    if grid.dims() != 1 {
        return Err(Error::DimensionMismatch("hermite functions need a 1D grid".into()));
    }
    if !(omega > 0.0 && mass > 0.0 && hbar > 0.0) {
        return Err(Error::InvalidArgument("omega, mass and hbar must be positive".into()));
    }
    let scale = (mass * omega / hbar).sqrt();
    let xs = grid.axis(0);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    for n in 0..count {
        let row: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let xi = scale * (x - center);
                match n {
                    0 => scale.sqrt() * PI.powf(-0.25) * (-0.5 * xi * xi).exp(),
                    _ => {
                        let prev = rows[n - 1][i];
                        let prev2 = if n >= 2 { rows[n - 2][i] } else { 0.0 };
                        (2.0 / n as f64).sqrt() * xi * prev - ((n - 1) as f64 / n as f64).sqrt() * prev2
                    }
                }
            })
            .collect();
        rows.push(row);
    }
    rows.into_iter()
        .map(|row| {
            Wavefunction::new(
                grid.clone(),
                1,
                row.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
                0.0,
            )
        })
        .collect()
}

/// Modified Gram-Schmidt under the grid quadrature.
pub fn orthonormalize(states: &[Wavefunction]) -> Result<Vec<Wavefunction>> {
    let mut out: Vec<Wavefunction> = Vec::with_capacity(states.len());
    for s in states {
        let mut v = s.clone();
        for _ in 0..2 {
            for u in &out {
                let overlap = inner_product(u, &v)?;
                let values = v
                    .values()
                    .iter()
                    .zip(u.values())
                    .map(|(a, b)| a - b * overlap)
                    .collect();
                v = Wavefunction::new(v.grid().clone(), v.components(), values, v.time())?;
            }
        }
        out.push(v.normalized()?);
    }
    Ok(out)
}

/// Smooth compactly supported bump `exp(-1/(1-u^2))`, `u = 2(y - center)/width`,
/// normalized on the grid. Exactly zero outside `|y - center| < width/2`.
pub fn bump(grid: &Grid, center: f64, width: f64) -> Result<Wavefunction> {
    if grid.dims() != 1 {
        return Err(Error::DimensionMismatch("bump states need a 1D grid".into()));
    }
    if !(width > 0.0) {
        return Err(Error::InvalidArgument("bump width must be positive".into()));
    }
    let psi = Wavefunction::from_fn(grid, |y| {
        let u = 2.0 * (y[0] - center) / width;
        if u.abs() < 1.0 {
            Complex64::new((-1.0 / (1.0 - u * u)).exp(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })?;
    psi.normalized()
}

/// Linear combination `sum_i c_i psi_i` of states on the same grid.
pub fn superpose(terms: &[(Complex64, Wavefunction)]) -> Result<Wavefunction> {
    let (_, first) = terms
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty superposition".into()))?;
    let mut values = vec![Complex64::new(0.0, 0.0); first.values().len()];
    for (c, psi) in terms {
        first.check_compatible(psi)?;
        for (v, z) in values.iter_mut().zip(psi.values()) {
            *v += c * z;
        }
    }
    Wavefunction::new(first.grid().clone(), first.components(), values, first.time())
}

/// Tensor product `a(x) b(y)` on the product grid.
pub fn tensor(a: &Wavefunction, b: &Wavefunction) -> Result<Wavefunction> {
    if a.components() != 1 || b.components() != 1 {
        return Err(Error::ComponentMismatch {
            expected: 1,
            got: a.components().max(b.components()),
        });
    }
    let grid = a.grid().product(b.grid())?;
    let mut values = Vec::with_capacity(grid.cell_count());
    for x in a.values() {
        for y in b.values() {
            values.push(x * y);
        }
    }
    Wavefunction::new(grid, 1, values, a.time())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn gaussian_is_normalized_with_requested_moments() {
        let g = make_grid(&[(-10.0, 10.0)], &[256]).unwrap();
        let psi = gaussian(&g, &[1.0], &[0.8], &[2.0]).unwrap();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
        let rho = psi.density();
        let dx = g.spacing()[0];
        let mean: f64 = g.axis(0).iter().zip(&rho).map(|(x, r)| x * r).sum::<f64>() * dx;
        let var: f64 = g.axis(0).iter().zip(&rho).map(|(x, r)| (x - mean).powi(2) * r).sum::<f64>() * dx;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!((var - 0.64).abs() < 1e-12);
    }

    #[test]
    fn hermite_functions_are_orthonormal() {
        let g = make_grid(&[(-10.0, 10.0)], &[256]).unwrap();
        let h = hermite_functions(&g, 6, 1.3, 1.0, 1.0, 0.5).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let s = inner_product(&h[i], &h[j]).unwrap();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((s.re - expected).abs() < 1e-12 && s.im.abs() < 1e-14, "{i} {j} {s}");
            }
        }
    }

    #[test]
    fn bump_has_compact_support() {
        let g = make_grid(&[(-8.0, 8.0)], &[128]).unwrap();
        let b = bump(&g, 2.0, 3.0).unwrap();
        assert!((b.norm_sqr() - 1.0).abs() < 1e-14);
        for (y, z) in g.axis(0).iter().zip(b.values()) {
            if (y - 2.0).abs() >= 1.5 {
                assert_eq!(z.norm(), 0.0);
            } else {
                assert!(z.norm() > 0.0);
            }
        }
    }

    #[test]
    fn tensor_layout_puts_second_factor_last() {
        let gx = make_grid(&[(0.0, 1.0)], &[8]).unwrap();
        let gy = make_grid(&[(0.0, 2.0)], &[16]).unwrap();
        let a = Wavefunction::from_fn(&gx, |x| Complex64::new(x[0], 0.0)).unwrap();
        let b = Wavefunction::from_fn(&gy, |y| Complex64::new(0.0, y[0])).unwrap();
        let t = tensor(&a, &b).unwrap();
        let g = t.grid().clone();
        for (flat, x) in g.centers().enumerate() {
            assert!((t.values()[flat] - Complex64::new(0.0, x[0] * x[1])).norm() < 1e-15);
        }
    }
}
