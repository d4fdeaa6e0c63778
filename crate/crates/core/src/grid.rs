//! Uniform periodic discretization of a box in configuration space.
//!
//! Cell `i` along dimension `d` covers `[lo_d + i*dx_d, lo_d + (i+1)*dx_d)` and
//! has its center at `lo_d + (i + 0.5)*dx_d`. Fields over a grid are stored
//! row-major: the last dimension varies fastest.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable holding the maximum number of cells a grid may have.
pub const MEMORY_BUDGET_ENV: &str = "METAWORLD_MAX_CELLS";

/// Cell budget used when [`MEMORY_BUDGET_ENV`] is unset (2^24 cells).
pub const DEFAULT_MAX_CELLS: usize = 1 << 24;

pub const MIN_POINTS: usize = 8;

/// Reads the cell budget from the environment, falling back to [`DEFAULT_MAX_CELLS`].
pub fn memory_budget() -> usize {
    std::env::var(MEMORY_BUDGET_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_CELLS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    extent: Vec<(f64, f64)>,
    points: Vec<usize>,
    spacing: Vec<f64>,
}

/// Builds a grid checked against the environment's memory budget.
pub fn make_grid(extent: &[(f64, f64)], points: &[usize]) -> Result<Grid> {
    Grid::with_budget(extent, points, memory_budget())
}

impl Grid {
    pub fn with_budget(extent: &[(f64, f64)], points: &[usize], budget: usize) -> Result<Self> {
        if extent.is_empty() || extent.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} intervals vs {} point counts",
                extent.len(),
                points.len()
            )));
        }
        let mut spacing = Vec::with_capacity(points.len());
        let mut cells: usize = 1;
        for (dim, (&(lo, hi), &n)) in extent.iter().zip(points).enumerate() {
            if n < MIN_POINTS || !n.is_power_of_two() {
                return Err(Error::BadPointCount { dim, points: n });
            }
            if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
                return Err(Error::EmptyInterval { dim, lo, hi });
            }
            spacing.push((hi - lo) / n as f64);
            cells = cells
                .checked_mul(n)
                .ok_or(Error::MemoryBudget { cells: usize::MAX, budget })?;
        }
        if cells > budget {
            return Err(Error::MemoryBudget { cells, budget });
        }
        Ok(Self {
            extent: extent.to_vec(),
            points: points.to_vec(),
            spacing,
        })
    }

    /// Cartesian product `self x other`; `other`'s dimensions come last.
    pub fn product(&self, other: &Grid) -> Result<Grid> {
        let extent: Vec<_> = self.extent.iter().chain(&other.extent).copied().collect();
        let points: Vec<_> = self.points.iter().chain(&other.points).copied().collect();
        make_grid(&extent, &points)
    }

    /// Sub-grid made of the listed dimensions, in the given order.
    pub fn select(&self, dims: &[usize]) -> Result<Grid> {
        let extent: Vec<_> = dims.iter().map(|&d| self.extent[d]).collect();
        let points: Vec<_> = dims.iter().map(|&d| self.points[d]).collect();
        make_grid(&extent, &points)
    }

    pub fn dims(&self) -> usize {
        self.points.len()
    }

    pub fn extent(&self) -> &[(f64, f64)] {
        &self.extent
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.extent.iter().map(|(lo, hi)| hi - lo).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.points.iter().product()
    }

    /// Quadrature weight of a single cell, the product of all spacings.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims()];
        for d in (0..self.dims().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.points[d + 1];
        }
        strides
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.points)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.dims()];
        for d in (0..self.dims()).rev() {
            index[d] = flat % self.points[d];
            flat /= self.points[d];
        }
        index
    }

    pub fn axis_center(&self, dim: usize, i: usize) -> f64 {
        self.extent[dim].0 + (i as f64 + 0.5) * self.spacing[dim]
    }

    /// Cell centers along one dimension.
    pub fn axis(&self, dim: usize) -> Vec<f64> {
        (0..self.points[dim])
            .map(|i| self.axis_center(dim, i))
            .collect()
    }

    pub fn cell_center(&self, index: &[usize]) -> Vec<f64> {
        index
            .iter()
            .enumerate()
            .map(|(d, &i)| self.axis_center(d, i))
            .collect()
    }

    /// Cell centers in storage order.
    pub fn centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.cell_count()).map(move |flat| self.cell_center(&self.multi_index(flat)))
    }

    /// Discrete Fourier wavenumbers in FFT layout: `k_j = 2*pi*f_j / L` with
    /// `f = 0, 1, ..., n/2 - 1, -n/2, ..., -1`. The Nyquist frequency appears
    /// once, with negative sign, so each axis sums to `-pi * n / L`.
    pub fn wavenumbers(&self) -> Vec<Vec<f64>> {
        (0..self.dims())
            .map(|d| {
                let n = self.points[d];
                let length = self.extent[d].1 - self.extent[d].0;
                (0..n)
                    .map(|j| {
                        let f = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
                        2.0 * PI * f / length
                    })
                    .collect()
            })
            .collect()
    }

    /// Index of the cell containing `q`, or `None` when `q` lies outside the box.
    pub fn locate_cell(&self, q: &[f64]) -> Result<Option<Vec<usize>>> {
        if q.len() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, grid has {} dimensions",
                q.len(),
                self.dims()
            )));
        }
        let mut index = Vec::with_capacity(self.dims());
        for (d, &x) in q.iter().enumerate() {
            if x.is_nan() {
                return Err(Error::NanCoordinate { dim: d });
            }
            let (lo, hi) = self.extent[d];
            if x < lo || x >= hi {
                return Ok(None);
            }
            let i = ((x - lo) / self.spacing[d]).floor() as usize;
            // rounding can push points just below hi into cell n
            index.push(i.min(self.points[d] - 1));
        }
        Ok(Some(index))
    }

    /// Maps a coordinate back into `[lo, hi)` along a periodic dimension.
    pub fn wrap(&self, dim: usize, x: f64) -> f64 {
        let (lo, hi) = self.extent[dim];
        let length = hi - lo;
        let mut y = lo + (x - lo).rem_euclid(length);
        if y >= hi {
            y = lo;
        }
        y
    }

    /// Flat indices of the outer shell: cells within `ceil(fraction * n_d)`
    /// of either edge along any dimension.
    pub fn shell_mask(&self, fraction: f64) -> Vec<bool> {
        let widths: Vec<usize> = self
            .points
            .iter()
            .map(|&n| ((fraction * n as f64).ceil() as usize).max(1))
            .collect();
        (0..self.cell_count())
            .map(|flat| {
                self.multi_index(flat)
                    .iter()
                    .zip(self.points.iter().zip(&widths))
                    .any(|(&i, (&n, &w))| i < w || i >= n - w)
            })
            .collect()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}
