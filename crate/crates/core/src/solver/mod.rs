//! Ground-truth solvers and physics oracles.
//!
//! Two discretizations of the steady balance `div(λ grad T) + φ = 0` with
//! φ = φ_b in cells and φ = -k (T - T0) in the coolant:
//!
//! * low fidelity: the non-conservative finite-difference stencil with a
//!   central-difference conductivity gradient and mirrored boundary nodes,
//!   the same equations the physics-informed loss penalizes;
//! * reference: a conservative finite-volume scheme with harmonic-mean face
//!   conductivities and insulated boundary faces, standing in for the
//!   high-fidelity simulation.
//!
//! Both are solved by deterministic Gauss-Seidel sweeps; [`solve_dense`]
//! assembles either system independently and factors it directly.

mod dense;
mod stencil;

pub use dense::{solve_dense, DENSE_GRID_CAP};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{PackConfig, ScalarField};
use crate::layout::BatteryMask;
use crate::physics;

/// Which discrete system to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    LowFidelity,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Iterative,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Relative tolerance on both the sweep-to-sweep change and the residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 200_000, method: Method::Iterative }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidOptions(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidOptions("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_inputs(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> Result<()> {
    pack.validate()?;
    if !lambda.grid().same_shape(mask.grid()) {
        return Err(Error::GridMismatch);
    }
    if mask.count() == mask.flags().len() {
        return Err(Error::Singular(
            "every pixel is battery: with no coolant sink the insulated problem has no unique solution".into(),
        ));
    }
    Ok(())
}

fn solve(system: System, lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig, opts: &SolveOptions) -> Result<ScalarField> {
    opts.validate()?;
    check_inputs(lambda, mask, pack)?;
    match opts.method {
        Method::Dense => solve_dense(lambda, mask, pack, system),
        Method::Iterative => {
            let stencil = match system {
                System::LowFidelity => stencil::FivePoint::low_fidelity(lambda, mask, pack),
                System::Reference => stencil::FivePoint::reference(lambda, mask, pack),
            };
            let values = stencil.gauss_seidel(pack.t0, opts)?;
            ScalarField::new(*lambda.grid(), values)
        }
    }
}

/// Solves the low-fidelity finite-difference system.
pub fn solve_lowfi(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig, opts: &SolveOptions) -> Result<ScalarField> {
    solve(System::LowFidelity, lambda, mask, pack, opts)
}

/// Solves the conservative finite-volume reference system.
pub fn solve_reference(lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig, opts: &SolveOptions) -> Result<ScalarField> {
    solve(System::Reference, lambda, mask, pack, opts)
}

pub fn solve_system(system: System, lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig, opts: &SolveOptions) -> Result<ScalarField> {
    solve(system, lambda, mask, pack, opts)
}

/// Per-pixel physics error `|T - T'/4|` of a temperature field under the
/// low-fidelity stencil, with the intensity completed from `T`.
pub fn residual_lowfi(t: &ScalarField, lambda: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> Result<ScalarField> {
    t.check_same_grid(lambda)?;
    if !t.grid().same_shape(mask.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = t.grid();
    let phi = physics::complete_intensity(t.values(), mask.flags(), pack);
    let target = physics::jacobi_target(t.values(), lambda.values(), &phi, grid.rows(), grid.cols(), grid.step());
    let delta = t.values().iter().zip(&target).map(|(&v, &tp)| (v - 0.25 * tp).abs()).collect();
    ScalarField::new(*grid, delta)
}

/// Heat generated in the cells against heat removed by the coolant sink, W/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub heat_in: f64,
    pub heat_out: f64,
    /// `|in - out| / in`, zero when no heat is generated.
    pub relative_mismatch: f64,
}

pub fn energy_balance(t: &ScalarField, mask: &BatteryMask, pack: &PackConfig) -> Result<EnergyBalance> {
    if !t.grid().same_shape(mask.grid()) {
        return Err(Error::GridMismatch);
    }
    let h2 = t.grid().step().powi(2);
    let mut heat_in = 0.0;
    let mut heat_out = 0.0;
    for (&v, &battery) in t.values().iter().zip(mask.flags()) {
        if battery {
            heat_in += pack.phi_battery * h2;
        } else {
            heat_out += pack.sink_coefficient * (v - pack.t0) * h2;
        }
    }
    let relative_mismatch = if heat_in == 0.0 { 0.0 } else { (heat_in - heat_out).abs() / heat_in };
    Ok(EnergyBalance { heat_in, heat_out, relative_mismatch })
}
