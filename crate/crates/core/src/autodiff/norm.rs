use super::{GradBuf, Node, Op, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(super) struct Saved<S> {
    input: usize,
    scale: usize,
    shift: usize,
    groups: usize,
    xhat: Vec<S>,
    /// `1 / sqrt(var + eps)` per (batch, group).
    rstd: Vec<S>,
}

impl<'t, S: Scalar> Tensor<'t, S> {
    /// Group normalization: statistics over each group of `channels / groups`
    /// channels and all pixels, followed by a per-channel affine map.
    pub fn group_norm(&self, groups: usize, scale: &Tensor<'t, S>, shift: &Tensor<'t, S>, eps: f64) -> Result<Tensor<'t, S>> {
        self.same_tape(scale);
        self.same_tape(shift);
        let [n, c, h, w] = self.shape();
        if groups == 0 || c % groups != 0 || scale.numel() != c || shift.numel() != c {
            return Err(Error::Shape(format!(
                "group_norm over {:?} with {groups} groups, scale {:?}, shift {:?}",
                self.shape(),
                scale.shape(),
                shift.shape()
            )));
        }
        let x = self.value();
        let gamma = scale.value();
        let beta = shift.value();
        let hw = h * w;
        let group_len = c / groups * hw;
        let mut xhat = vec![S::zero(); x.len()];
        let mut out = vec![S::zero(); x.len()];
        let mut rstd = Vec::with_capacity(n * groups);
        for (gi, (xs, xh)) in x.chunks_exact(group_len).zip(xhat.chunks_exact_mut(group_len)).enumerate() {
            let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / group_len as f64;
            let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / group_len as f64;
            let r = 1.0 / (var + eps).sqrt();
            let (mean_s, r_s) = (S::lit(mean), S::lit(r));
            for (o, &v) in xh.iter_mut().zip(xs) {
                *o = (v - mean_s) * r_s;
            }
            rstd.push(r_s);
            let g = gi % groups;
            let base = gi * group_len;
            for (ci, plane) in xh.chunks_exact(hw).enumerate() {
                let ch = g * (c / groups) + ci;
                let dst = &mut out[base + ci * hw..base + (ci + 1) * hw];
                for (o, &v) in dst.iter_mut().zip(plane) {
                    *o = v * gamma[ch] + beta[ch];
                }
            }
        }
        let rg = self.requires_grad() || scale.requires_grad() || shift.requires_grad();
        let saved = Saved { input: self.id, scale: scale.id, shift: shift.id, groups, xhat, rstd };
        Ok(self.tape.push(self.shape(), out, rg, Op::GroupNorm(saved)))
    }
}

pub(super) fn backward<S: Scalar>(saved: &Saved<S>, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let [_, c, h, w] = nodes[saved.input].shape;
    let hw = h * w;
    let per_group = c / saved.groups;
    let group_len = per_group * hw;
    if let Some(dgamma) = buf.slot(saved.scale, nodes) {
        for (i, (gc, xc)) in g.chunks_exact(hw).zip(saved.xhat.chunks_exact(hw)).enumerate() {
            dgamma[i % c] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<S>();
        }
    }
    if let Some(dbeta) = buf.slot(saved.shift, nodes) {
        for (i, gc) in g.chunks_exact(hw).enumerate() {
            dbeta[i % c] += gc.iter().copied().sum::<S>();
        }
    }
    let gamma = nodes[saved.scale].value.clone();
    if let Some(dx) = buf.slot(saved.input, nodes) {
        let inv_len = S::lit(1.0 / group_len as f64);
        let mut dxhat = vec![S::zero(); group_len];
        for gi in 0..saved.rstd.len() {
            let base = gi * group_len;
            let first_channel = (gi % saved.groups) * per_group;
            for (j, d) in dxhat.iter_mut().enumerate() {
                *d = g[base + j] * gamma[first_channel + j / hw];
            }
            let xh = &saved.xhat[base..base + group_len];
            let m1 = dxhat.iter().copied().sum::<S>() * inv_len;
            let m2 = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<S>() * inv_len;
            let r = saved.rstd[gi];
            for ((o, &d), &x) in dx[base..base + group_len].iter_mut().zip(&dxhat).zip(xh) {
                *o += r * (d - m1 - x * m2);
            }
        }
    }
}
