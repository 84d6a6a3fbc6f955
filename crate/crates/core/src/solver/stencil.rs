use super::SolveOptions;
use crate::error::{Error, Result};
use crate::fields::{PackConfig, ScalarField};
use crate::layout::BatteryMask;
use crate::physics::reflect;

/// Five-point system `diag[p] T[p] = rhs[p] + sum_q coef[p][q] T[nb[p][q]]`,
/// every row scaled by h². Neighbour order is east, west, north, south.
pub(super) struct FivePoint {
    nb: Vec<[usize; 4]>,
    coef: Vec<[f64; 4]>,
    diag: Vec<f64>,
    rhs: Vec<f64>,
}

impl FivePoint {
    fn with_sources(len: usize) -> Self {
        Self {
            nb: Vec::with_capacity(len),
            coef: Vec::with_capacity(len),
            diag: Vec::with_capacity(len),
            rhs: Vec::with_capacity(len),
        }
    }

    fn push(&mut self, nb: [usize; 4], coef: [f64; 4], diag: f64, battery: bool, h2: f64, pack: &PackConfig) {
        let (sink, source) = if battery {
            (0.0, pack.phi_battery)
        } else {
            (pack.sink_coefficient, pack.sink_coefficient * pack.t0)
        };
        self.nb.push(nb);
        self.coef.push(coef);
        self.diag.push(diag + h2 * sink);
        self.rhs.push(h2 * source);
    }

    /// Finite-difference stencil with the central-difference conductivity
    /// gradient and mirrored neighbours at the walls.
    pub fn low_fidelity(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> Self {
        let grid = lambda.grid();
        let (rows, cols) = (grid.rows(), grid.cols());
        let h2 = grid.step().powi(2);
        let l = lambda.values();
        let mut sys = Self::with_sources(grid.len());
        for i in 0..rows {
            let s_row = reflect(i as isize - 1, rows) * cols;
            let n_row = reflect(i as isize + 1, rows) * cols;
            for j in 0..cols {
                let c = i * cols + j;
                let e = i * cols + reflect(j as isize + 1, cols);
                let w = i * cols + reflect(j as isize - 1, cols);
                let (n, s) = (n_row + j, s_row + j);
                let gx = 0.25 * (l[e] - l[w]);
                let gy = 0.25 * (l[n] - l[s]);
                let lc = l[c];
                sys.push([e, w, n, s], [lc + gx, lc - gx, lc + gy, lc - gy], 4.0 * lc, mask.flags()[c], h2, pack);
            }
        }
        sys
    }

    /// Finite-volume fluxes with harmonic-mean face conductivity; faces on
    /// the boundary carry no flux.
    pub fn reference(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> Self {
        let grid = lambda.grid();
        let (rows, cols) = (grid.rows(), grid.cols());
        let h2 = grid.step().powi(2);
        let l = lambda.values();
        let face = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let mut sys = Self::with_sources(grid.len());
        for i in 0..rows {
            for j in 0..cols {
                let c = i * cols + j;
                let candidates = [
                    (j + 1 < cols).then(|| c + 1),
                    (j > 0).then(|| c - 1),
                    (i + 1 < rows).then(|| c + cols),
                    (i > 0).then(|| c - cols),
                ];
                let mut nb = [c; 4];
                let mut coef = [0.0; 4];
                for (q, cand) in candidates.into_iter().enumerate() {
                    if let Some(o) = cand {
                        nb[q] = o;
                        coef[q] = face(l[c], l[o]);
                    }
                }
                let diag = coef.iter().sum();
                sys.push(nb, coef, diag, mask.flags()[c], h2, pack);
            }
        }
        sys
    }

    fn row_sum(&self, p: usize, t: &[f64]) -> f64 {
        let (nb, coef) = (&self.nb[p], &self.coef[p]);
        self.rhs[p] + coef[0] * t[nb[0]] + coef[1] * t[nb[1]] + coef[2] * t[nb[2]] + coef[3] * t[nb[3]]
    }

    /// Largest row residual relative to the largest source term.
    pub fn relative_residual(&self, t: &[f64]) -> f64 {
        let worst = (0..t.len()).map(|p| (self.row_sum(p, t) - self.diag[p] * t[p]).abs()).fold(0.0, f64::max);
        let scale = self.rhs.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }

    /// Row-major Gauss-Seidel sweeps starting from `t_init` everywhere.
    ///
    /// Stops once the largest update is within `tolerance` of the largest
    /// temperature and the relative residual is within `tolerance`.
    pub fn gauss_seidel(&self, t_init: f64, opts: &SolveOptions) -> Result<Vec<f64>> {
        let len = self.diag.len();
        let mut t = vec![t_init; len];
        let mut residual = f64::INFINITY;
        let mut prev_change = f64::INFINITY;
        for _ in 0..opts.max_iterations {
            let mut max_change = 0.0f64;
            let mut max_abs = 0.0f64;
            for p in 0..len {
                let new = self.row_sum(p, &t) / self.diag[p];
                max_change = max_change.max((new - t[p]).abs());
                max_abs = max_abs.max(new.abs());
                t[p] = new;
            }
            if !max_change.is_finite() {
                return Err(Error::Singular("Gauss-Seidel iterates diverged".into()));
            }
            // Slowly contracting sweeps leave an error of about
            // change * q / (1 - q), with q the observed contraction ratio.
            let q = max_change / prev_change;
            prev_change = max_change;
            let error_estimate = if q < 1.0 { max_change * q / (1.0 - q) } else { f64::INFINITY };
            let scale = opts.tolerance * max_abs.max(f64::MIN_POSITIVE);
            if max_change == 0.0 || (max_change <= scale && error_estimate <= scale) {
                residual = self.relative_residual(&t);
                if residual <= opts.tolerance {
                    return Ok(t);
                }
            }
        }
        if residual.is_infinite() {
            residual = self.relative_residual(&t);
        }
        Err(Error::NotConverged { iterations: opts.max_iterations, residual })
    }
}
