use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fields::{PackConfig, ScalarField};
use crate::physics;
use crate::scalar::Scalar;

fn values_f64<S: Scalar>(t: &Tensor<'_, S>) -> Vec<f64> {
    t.value().iter().map(|v| v.as_f64()).collect()
}

fn check_field<S: Scalar>(t: &Tensor<'_, S>, field: &ScalarField) -> Result<()> {
    let [n, c, h, w] = t.shape();
    let g = field.grid();
    if n != 1 || c != 1 || h != g.rows() || w != g.cols() {
        return Err(Error::Shape(format!("tensor {:?} against a {}x{} field", t.shape(), g.rows(), g.cols())));
    }
    Ok(())
}

fn battery_flags(lambda: &ScalarField, pack: &PackConfig) -> Vec<bool> {
    lambda.values().iter().map(|&l| pack.is_battery_conductivity(l)).collect()
}

/// Intensity from the detached prediction: `phi_b` on battery pixels,
/// `-k (T - T0)` on coolant pixels. Returned as a constant.
pub fn complete_intensity<'t, S: Scalar>(t_hat: &Tensor<'t, S>, lambda: &ScalarField, pack: &PackConfig) -> Result<Tensor<'t, S>> {
    check_field(t_hat, lambda)?;
    let phi = physics::complete_intensity(&values_f64(t_hat), &battery_flags(lambda, pack), pack);
    t_hat.tape().constant(t_hat.shape(), phi.into_iter().map(S::lit).collect())
}

/// Jacobi reconstruction `T'` of every pixel from the detached prediction,
/// with mirrored neighbours at the walls. Returned as a constant.
pub fn jacobi_target<'t, S: Scalar>(t_hat: &Tensor<'t, S>, lambda: &ScalarField, phi: &Tensor<'t, S>) -> Result<Tensor<'t, S>> {
    check_field(t_hat, lambda)?;
    check_field(phi, lambda)?;
    let g = lambda.grid();
    let target = physics::jacobi_target(&values_f64(t_hat), lambda.values(), &values_f64(phi), g.rows(), g.cols(), g.step());
    t_hat.tape().constant(t_hat.shape(), target.into_iter().map(S::lit).collect())
}

/// `eta1 + eta2 * (delta - min) / (max - min)`, or `eta1 + eta2 / 2` for a
/// flat error map. Returned as a constant.
pub fn pixel_weights<'t, S: Scalar>(delta: &Tensor<'t, S>, eta1: f64, eta2: f64) -> Result<Tensor<'t, S>> {
    let w = physics::linear_weights(&values_f64(delta), eta1, eta2);
    delta.tape().constant(delta.shape(), w.into_iter().map(S::lit).collect())
}

/// Detached target `T'/4` and weights of the physics loss at the current
/// prediction.
pub fn physics_target<S: Scalar>(
    t_hat: &Tensor<'_, S>,
    lambda: &ScalarField,
    pack: &PackConfig,
    eta1: f64,
    eta2: f64,
) -> Result<(Vec<S>, Vec<S>)> {
    check_field(t_hat, lambda)?;
    let t = values_f64(t_hat);
    let g = lambda.grid();
    let phi = physics::complete_intensity(&t, &battery_flags(lambda, pack), pack);
    let target: Vec<f64> =
        physics::jacobi_target(&t, lambda.values(), &phi, g.rows(), g.cols(), g.step()).into_iter().map(|v| 0.25 * v).collect();
    let delta: Vec<f64> = t.iter().zip(&target).map(|(a, b)| (a - b).abs()).collect();
    let w = physics::linear_weights(&delta, eta1, eta2);
    Ok((target.into_iter().map(S::lit).collect(), w.into_iter().map(S::lit).collect()))
}

/// Weighted Jacobi fixed-point residual `mean(w |T - T'/4|)`. Only the
/// standalone `T` carries gradient.
///
/// Works in any temperature offset as long as `pack.t0` uses the same one;
/// the trainer passes rises over T0 with `t0 = 0` to keep f32 precision.
pub fn physics_loss<'t, S: Scalar>(
    t_hat: Tensor<'t, S>,
    lambda: &ScalarField,
    pack: &PackConfig,
    eta1: f64,
    eta2: f64,
) -> Result<Tensor<'t, S>> {
    let (target, w) = physics_target(&t_hat, lambda, pack, eta1, eta2)?;
    t_hat.weighted_l1(&target, &w)
}

/// `mean(w |pred - truth|)` with weights from the detached error map.
pub fn data_loss<'t, S: Scalar>(pred: Tensor<'t, S>, truth: &[S], eta1: f64, eta2: f64) -> Result<Tensor<'t, S>> {
    let p = pred.value();
    if p.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} truth values", p.len(), truth.len())));
    }
    let delta: Vec<f64> = p.iter().zip(truth).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).collect();
    let w: Vec<S> = physics::linear_weights(&delta, eta1, eta2).into_iter().map(S::lit).collect();
    pred.weighted_l1(truth, &w)
}
