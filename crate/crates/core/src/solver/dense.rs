use nalgebra::{DMatrix, DVector};

use super::System;
use crate::error::{Error, Result};
use crate::fields::{PackConfig, ScalarField};
use crate::layout::BatteryMask;
use crate::physics::reflect;

/// Largest grid side the dense solver accepts.
pub const DENSE_GRID_CAP: usize = 32;

/// Assembles the full `(m n) x (m n)` matrix of the chosen system and solves
/// it by LU factorisation. Intended as a brute-force oracle for small grids.
pub fn solve_dense(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig, system: System) -> Result<ScalarField> {
    let grid = *lambda.grid();
    let (rows, cols) = (grid.rows(), grid.cols());
    if rows > DENSE_GRID_CAP || cols > DENSE_GRID_CAP {
        return Err(Error::GridTooLarge { rows, cols, cap: DENSE_GRID_CAP });
    }
    if !grid.same_shape(mask.grid()) {
        return Err(Error::GridMismatch);
    }
    let (a, b) = match system {
        System::LowFidelity => assemble_finite_difference(lambda, mask, pack),
        System::Reference => assemble_finite_volume(lambda, mask, pack),
    };
    let x = a.lu().solve(&b).ok_or_else(|| Error::Singular("dense LU factorisation found a zero pivot".into()))?;
    ScalarField::new(grid, x.iter().copied().collect())
}

/// Sink and source split of φ: returns `(coefficient of T, constant)` so that
/// φ = coefficient * T + constant.
fn intensity_terms(battery: bool, pack: &PackConfig) -> (f64, f64) {
    if battery {
        (0.0, pack.phi_battery)
    } else {
        (-pack.sink_coefficient, pack.sink_coefficient * pack.t0)
    }
}

/// Rows of
/// `(λE-λW)/(2h) (TE-TW)/(2h) + (λN-λS)/(2h) (TN-TS)/(2h) + λ/h² (TE+TW+TN+TS-4T) + φ = 0`
/// with mirrored out-of-domain neighbours.
fn assemble_finite_difference(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> (DMatrix<f64>, DVector<f64>) {
    let grid = lambda.grid();
    let (rows, cols, h) = (grid.rows(), grid.cols(), grid.step());
    let n = rows * cols;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let lam = |i: isize, j: isize| lambda.get(reflect(i, rows), reflect(j, cols));
    let idx = |i: isize, j: isize| reflect(i, rows) * cols + reflect(j, cols);
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            let p = idx(i, j);
            let lc = lam(i, j);
            let dlx = (lam(i, j + 1) - lam(i, j - 1)) / (2.0 * h);
            let dly = (lam(i + 1, j) - lam(i - 1, j)) / (2.0 * h);
            // gradient cross terms
            a[(p, idx(i, j + 1))] += dlx / (2.0 * h);
            a[(p, idx(i, j - 1))] -= dlx / (2.0 * h);
            a[(p, idx(i + 1, j))] += dly / (2.0 * h);
            a[(p, idx(i - 1, j))] -= dly / (2.0 * h);
            // Laplacian
            for (di, dj) in [(0, 1), (0, -1), (1, 0), (-1, 0)] {
                a[(p, idx(i + di, j + dj))] += lc / (h * h);
            }
            a[(p, p)] -= 4.0 * lc / (h * h);
            let (sink, source) = intensity_terms(mask.flags()[p], pack);
            a[(p, p)] += sink;
            b[p] = -source;
        }
    }
    (a, b)
}

/// Rows of `sum_faces λf (Tnb - T) / h² + φ = 0`, no flux through the walls.
fn assemble_finite_volume(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> (DMatrix<f64>, DVector<f64>) {
    let grid = lambda.grid();
    let (rows, cols, h) = (grid.rows() as isize, grid.cols() as isize, grid.step());
    let n = (rows * cols) as usize;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for i in 0..rows {
        for j in 0..cols {
            let p = (i * cols + j) as usize;
            let lc = lambda.get(i as usize, j as usize);
            for (di, dj) in [(0, 1), (0, -1), (1, 0), (-1, 0)] {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= rows || nj >= cols {
                    continue;
                }
                let ln = lambda.get(ni as usize, nj as usize);
                let lf = 2.0 * lc * ln / (lc + ln) / (h * h);
                a[(p, (ni * cols + nj) as usize)] += lf;
                a[(p, p)] -= lf;
            }
            let (sink, source) = intensity_terms(mask.flags()[p], pack);
            a[(p, p)] += sink;
            b[p] = -source;
        }
    }
    (a, b)
}
