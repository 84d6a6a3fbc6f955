use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A named trainable array with its Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<S>) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(Error::Params(format!("{name}: shape {shape:?} needs {n} values, got {}", value.len())));
        }
        Ok(Self { name, shape, m: vec![S::zero(); n], v: vec![S::zero(); n], value })
    }

    /// Shape padded on the left with ones to four axes.
    pub fn shape4(&self) -> [usize; 4] {
        let mut out = [1; 4];
        let off = 4 - self.shape.len().min(4);
        out[off..].copy_from_slice(&self.shape[self.shape.len() - (4 - off)..]);
        out
    }
}

/// Ordered parameter list of a model.
#[derive(Debug, Clone, Default)]
pub struct ModelParams<S> {
    params: Vec<Parameter<S>>,
    step: u64,
}

impl<S: Scalar> ModelParams<S> {
    pub fn new() -> Self {
        Self { params: Vec::new(), step: 0 }
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, p: Parameter<S>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter<S> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter<S> {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<S>, trainable: bool) -> Vec<Tensor<'t, S>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.shape4(), p.value.clone(), trainable).expect("parameter shape is consistent"))
            .collect()
    }

    /// SHA-256 over names, shapes and the exact bits of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            for &d in &p.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &p.value {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies values from `other`, which must have the same names and shapes
    /// in the same order. Adam state is reset.
    pub fn load_values(&mut self, other: &ModelParams<S>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Params(format!("expected {} parameters, found {}", self.len(), other.len())));
        }
        for (dst, src) in self.params.iter().zip(&other.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::Params(format!(
                    "expected {} {:?}, found {} {:?}",
                    dst.name, dst.shape, src.name, src.shape
                )));
            }
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.clone_from(&src.value);
            dst.m.iter_mut().for_each(|x| *x = S::zero());
            dst.v.iter_mut().for_each(|x| *x = S::zero());
        }
        self.step = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One epoch of multiplicative learning-rate decay.
pub fn decay_lr(lr: f64, factor: f64) -> f64 {
    lr * factor
}

/// One Adam update from the gradients accumulated on `bound`, the tensors
/// returned by [`ModelParams::bind`]. Parameters without a gradient are
/// treated as having a zero gradient.
pub fn adam_step<S: Scalar>(params: &mut ModelParams<S>, bound: &[Tensor<'_, S>], cfg: &AdamConfig, lr: f64) -> Result<()> {
    if bound.len() != params.len() {
        return Err(Error::Params(format!("{} bound tensors for {} parameters", bound.len(), params.len())));
    }
    params.step += 1;
    let t = params.step as i32;
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let c1 = S::lit(1.0 - cfg.beta1.powi(t));
    let c2 = S::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (S::lit(lr), S::lit(cfg.eps));
    for (p, tensor) in params.params.iter_mut().zip(bound) {
        let g = tensor.grad().unwrap_or_else(|| vec![S::zero(); p.value.len()]);
        for i in 0..p.value.len() {
            p.m[i] = b1 * p.m[i] + (S::one() - b1) * g[i];
            p.v[i] = b2 * p.v[i] + (S::one() - b2) * g[i] * g[i];
            let mhat = p.m[i] / c1;
            let vhat = p.v[i] / c2;
            p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
