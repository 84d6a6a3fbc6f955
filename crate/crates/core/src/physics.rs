//! Pixel-level kernels of the low-fidelity heat balance, shared by the
//! solver's residual check and the physics-informed loss.
//!
//! All stencils extend fields past the boundary by mirroring about the
//! boundary node: index `-1` reads index `1` and index `n` reads `n - 2`,
//! the discrete form of the adiabatic (zero normal flux) walls.

use crate::fields::PackConfig;
use crate::scalar::Scalar;

/// Mirror index about the boundary nodes, folding repeatedly if `i` is far
/// outside `[0, n)`.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Complete intensity: φ_b on battery pixels, `-k (T - T0)` on coolant pixels.
pub fn complete_intensity<S: Scalar>(temperature: &[S], battery: &[bool], pack: &PackConfig) -> Vec<S> {
    let phi_b = S::lit(pack.phi_battery);
    let k = S::lit(pack.sink_coefficient);
    let t0 = S::lit(pack.t0);
    temperature
        .iter()
        .zip(battery)
        .map(|(&t, &b)| if b { phi_b } else { -k * (t - t0) })
        .collect()
}

/// Jacobi reconstruction T' of every pixel from its four neighbours, the
/// source term, and the central-difference conductivity gradient:
///
/// ```text
/// T' = h²φ/λ + (λE - λW)/λ · (TE - TW)/4 + (λN - λS)/λ · (TN - TS)/4 + TE + TW + TN + TS
/// ```
///
/// A field solving the discrete balance satisfies `T = T'/4` at every pixel.
pub fn jacobi_target<S: Scalar>(t: &[S], lambda: &[S], phi: &[S], rows: usize, cols: usize, h: S) -> Vec<S> {
    assert_eq!(t.len(), rows * cols);
    assert_eq!(lambda.len(), rows * cols);
    assert_eq!(phi.len(), rows * cols);
    let quarter = S::lit(0.25);
    let h2 = h * h;
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let up = reflect(i as isize - 1, rows) * cols;
        let down = reflect(i as isize + 1, rows) * cols;
        let row = i * cols;
        for j in 0..cols {
            let left = reflect(j as isize - 1, cols);
            let right = reflect(j as isize + 1, cols);
            let c = row + j;
            let (e, w, n, s) = (row + right, row + left, down + j, up + j);
            let lc = lambda[c];
            let cross_x = (lambda[e] - lambda[w]) / lc * (t[e] - t[w]) * quarter;
            let cross_y = (lambda[n] - lambda[s]) / lc * (t[n] - t[s]) * quarter;
            out.push(h2 * phi[c] / lc + cross_x + cross_y + t[e] + t[w] + t[n] + t[s]);
        }
    }
    out
}

/// Per-pixel weights `eta1 + eta2 (d - min d) / (max d - min d)`.
///
/// When the error map is flat (`max - min < 1e-12`) every pixel gets the
/// midpoint `eta1 + eta2 / 2`.
pub fn linear_weights<S: Scalar>(delta: &[S], eta1: f64, eta2: f64) -> Vec<S> {
    let (lo, hi) = delta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d.as_f64()), hi.max(d.as_f64())));
    let range = hi - lo;
    if !(range >= 1e-12) {
        return vec![S::lit(eta1 + 0.5 * eta2); delta.len()];
    }
    delta.iter().map(|d| S::lit(eta1 + eta2 * (d.as_f64() - lo) / range)).collect()
}
