use std::rc::Rc;

use super::{GradBuf, Node, Op, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn gaussian_cdf<S: Scalar>(x: S) -> S {
    S::lit(0.5) * (S::one() + (x * S::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gaussian_pdf<S: Scalar>(x: S) -> S {
    S::lit(0.398_942_280_401_432_7) * (-(x * x) * S::lit(0.5)).exp()
}

impl<'t, S: Scalar> Tensor<'t, S> {
    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&self) -> Tensor<'t, S> {
        let value = self.value().iter().map(|&x| x * gaussian_cdf(x)).collect();
        self.unary(self.shape(), value, Op::Gelu { input: self.id })
    }

    pub fn relu(&self) -> Tensor<'t, S> {
        let value = self.value().iter().map(|&x| x.max(S::zero())).collect();
        self.unary(self.shape(), value, Op::Relu { input: self.id })
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<'t, S>) -> Result<Tensor<'t, S>> {
        self.same_tape(other);
        let [n, ca, h, w] = self.shape();
        let [nb, cb, hb, wb] = other.shape();
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::Shape(format!("concat of {:?} and {:?}", self.shape(), other.shape())));
        }
        let (a, b) = (self.value(), other.value());
        let (la, lb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            out.extend_from_slice(&a[i * la..(i + 1) * la]);
            out.extend_from_slice(&b[i * lb..(i + 1) * lb]);
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push([n, ca + cb, h, w], out, rg, Op::Concat { a: self.id, b: other.id }))
    }

    /// `(1/N) sum w |pred - target|` over all N elements; `target` and
    /// `weights` are constants.
    pub fn weighted_l1(&self, target: &[S], weights: &[S]) -> Result<Tensor<'t, S>> {
        let pred = self.value();
        if target.len() != pred.len() || weights.len() != pred.len() {
            return Err(Error::Shape(format!(
                "weighted_l1 of {} predictions with {} targets and {} weights",
                pred.len(),
                target.len(),
                weights.len()
            )));
        }
        let total: S = pred.iter().zip(target).zip(weights).map(|((&p, &t), &w)| w * (p - t).abs()).sum();
        let loss = total / S::lit(pred.len() as f64);
        let op = Op::WeightedL1 { pred: self.id, target: Rc::new(target.to_vec()), weights: Rc::new(weights.to_vec()) };
        Ok(self.unary([1, 1, 1, 1], vec![loss], op))
    }
}

pub(super) fn gelu_backward<S: Scalar>(input: usize, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let x = nodes[input].value.clone();
    if let Some(dx) = buf.slot(input, nodes) {
        for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x.iter()) {
            *d += gv * (gaussian_cdf(xv) + xv * gaussian_pdf(xv));
        }
    }
}

pub(super) fn relu_backward<S: Scalar>(input: usize, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let x = nodes[input].value.clone();
    if let Some(dx) = buf.slot(input, nodes) {
        for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x.iter()) {
            if xv > S::zero() {
                *d += gv;
            }
        }
    }
}

pub(super) fn concat_backward<S: Scalar>(a: usize, b: usize, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let [n, ca, h, w] = nodes[a].shape;
    let cb = nodes[b].shape[1];
    let (la, lb) = (ca * h * w, cb * h * w);
    if let Some(da) = buf.slot(a, nodes) {
        for i in 0..n {
            let src = &g[i * (la + lb)..i * (la + lb) + la];
            da[i * la..(i + 1) * la].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
        }
    }
    if let Some(db) = buf.slot(b, nodes) {
        for i in 0..n {
            let src = &g[i * (la + lb) + la..(i + 1) * (la + lb)];
            db[i * lb..(i + 1) * lb].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
        }
    }
}

pub(super) fn weighted_l1_backward<S: Scalar>(
    pred: usize,
    target: &[S],
    weights: &[S],
    g: S,
    nodes: &[Node<S>],
    buf: &mut GradBuf<S>,
) {
    let p = nodes[pred].value.clone();
    let scale = g / S::lit(p.len() as f64);
    if let Some(dp) = buf.slot(pred, nodes) {
        for (((d, &pv), &t), &w) in dp.iter_mut().zip(p.iter()).zip(target).zip(weights) {
            let diff = pv - t;
            if diff > S::zero() {
                *d += w * scale;
            } else if diff < S::zero() {
                *d -= w * scale;
            }
        }
    }
}
