use super::{numel, GradBuf, Node, Op, Shape, Tensor};
use crate::error::{Error, Result};
use crate::physics::reflect;
use crate::scalar::Scalar;

/// Source taps `(i0, i1, w0, w1)` of each output index of a 2x bilinear
/// upsampling with half-pixel centres (align-corners off).
fn up2_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

impl<'t, S: Scalar> Tensor<'t, S> {
    /// 2x2 average pooling with stride 2; spatial sizes must be even.
    pub fn avg_pool2(&self) -> Result<Tensor<'t, S>> {
        let [n, c, h, w] = self.shape();
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("avg_pool2 needs even spatial size, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value();
        let quarter = S::lit(0.25);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in x.chunks_exact(h * w) {
            for y in 0..oh {
                let r0 = &plane[2 * y * w..(2 * y + 1) * w];
                let r1 = &plane[(2 * y + 1) * w..(2 * y + 2) * w];
                for xo in 0..ow {
                    out.push((r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter);
                }
            }
        }
        Ok(self.unary([n, c, oh, ow], out, Op::AvgPool2 { input: self.id }))
    }

    /// 2x bilinear upsampling, align-corners off.
    pub fn bilinear_up2(&self) -> Tensor<'t, S> {
        let [n, c, h, w] = self.shape();
        let (oh, ow) = (2 * h, 2 * w);
        let ty = up2_taps(h);
        let tx = up2_taps(w);
        let x = self.value();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut rows = vec![S::zero(); h * ow];
        for plane in x.chunks_exact(h * w) {
            for y in 0..h {
                for (xo, &(i0, i1, w0, w1)) in tx.iter().enumerate() {
                    rows[y * ow + xo] = plane[y * w + i0] * S::lit(w0) + plane[y * w + i1] * S::lit(w1);
                }
            }
            for &(i0, i1, w0, w1) in &ty {
                let (a, b) = (&rows[i0 * ow..(i0 + 1) * ow], &rows[i1 * ow..(i1 + 1) * ow]);
                out.extend(a.iter().zip(b).map(|(&p, &q)| p * S::lit(w0) + q * S::lit(w1)));
            }
        }
        self.unary([n, c, oh, ow], out, Op::BilinearUp2 { input: self.id })
    }

    /// Mirror padding about the boundary pixels (no edge duplication).
    pub fn reflect_pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Tensor<'t, S> {
        let [n, c, h, w] = self.shape();
        let (oh, ow) = (h + top + bottom, w + left + right);
        let x = self.value();
        let cols: Vec<usize> = (0..ow).map(|j| reflect(j as isize - left as isize, w)).collect();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in x.chunks_exact(h * w) {
            for i in 0..oh {
                let sy = reflect(i as isize - top as isize, h);
                out.extend(cols.iter().map(|&sx| plane[sy * w + sx]));
            }
        }
        self.unary([n, c, oh, ow], out, Op::ReflectPad { input: self.id, top, left })
    }

    /// Spatial window `[top, top + height) x [left, left + width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<'t, S>> {
        let [n, c, h, w] = self.shape();
        if top + height > h || left + width > w {
            return Err(Error::Shape(format!("crop {height}x{width} at ({top},{left}) of {h}x{w}")));
        }
        let x = self.value();
        let mut out = Vec::with_capacity(n * c * height * width);
        for plane in x.chunks_exact(h * w) {
            for i in top..top + height {
                out.extend_from_slice(&plane[i * w + left..i * w + left + width]);
            }
        }
        Ok(self.unary([n, c, height, width], out, Op::Crop { input: self.id, top, left }))
    }
}

pub(super) fn avg_pool2_backward<S: Scalar>(input: usize, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let [_, _, h, w] = nodes[input].shape;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::lit(0.25);
    if let Some(dx) = buf.slot(input, nodes) {
        for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
            for y in 0..oh {
                for xo in 0..ow {
                    let v = gp[y * ow + xo] * quarter;
                    plane[2 * y * w + 2 * xo] += v;
                    plane[2 * y * w + 2 * xo + 1] += v;
                    plane[(2 * y + 1) * w + 2 * xo] += v;
                    plane[(2 * y + 1) * w + 2 * xo + 1] += v;
                }
            }
        }
    }
}

pub(super) fn bilinear_up2_backward<S: Scalar>(input: usize, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let [_, _, h, w] = nodes[input].shape;
    let (oh, ow) = (2 * h, 2 * w);
    let ty = up2_taps(h);
    let tx = up2_taps(w);
    if let Some(dx) = buf.slot(input, nodes) {
        let mut rows = vec![S::zero(); h * ow];
        for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
            rows.iter_mut().for_each(|v| *v = S::zero());
            for (yo, &(i0, i1, w0, w1)) in ty.iter().enumerate() {
                let src = &gp[yo * ow..(yo + 1) * ow];
                for (xo, &v) in src.iter().enumerate() {
                    rows[i0 * ow + xo] += v * S::lit(w0);
                    rows[i1 * ow + xo] += v * S::lit(w1);
                }
            }
            for y in 0..h {
                for (xo, &(i0, i1, w0, w1)) in tx.iter().enumerate() {
                    let v = rows[y * ow + xo];
                    plane[y * w + i0] += v * S::lit(w0);
                    plane[y * w + i1] += v * S::lit(w1);
                }
            }
        }
    }
}

pub(super) fn reflect_pad_backward<S: Scalar>(
    input: usize,
    top: usize,
    left: usize,
    out_shape: Shape,
    g: &[S],
    nodes: &[Node<S>],
    buf: &mut GradBuf<S>,
) {
    let [_, _, h, w] = nodes[input].shape;
    let [_, _, oh, ow] = out_shape;
    debug_assert_eq!(g.len(), numel(&out_shape));
    let cols: Vec<usize> = (0..ow).map(|j| reflect(j as isize - left as isize, w)).collect();
    if let Some(dx) = buf.slot(input, nodes) {
        for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
            for i in 0..oh {
                let sy = reflect(i as isize - top as isize, h);
                for (j, &sx) in cols.iter().enumerate() {
                    plane[sy * w + sx] += gp[i * ow + j];
                }
            }
        }
    }
}

pub(super) fn crop_backward<S: Scalar>(
    input: usize,
    top: usize,
    left: usize,
    out_shape: Shape,
    g: &[S],
    nodes: &[Node<S>],
    buf: &mut GradBuf<S>,
) {
    let [_, _, h, w] = nodes[input].shape;
    let [_, _, ch, cw] = out_shape;
    if let Some(dx) = buf.slot(input, nodes) {
        for (plane, gp) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(ch * cw)) {
            for i in 0..ch {
                let dst = &mut plane[(top + i) * w + left..(top + i) * w + left + cw];
                dst.iter_mut().zip(&gp[i * cw..(i + 1) * cw]).for_each(|(d, &v)| *d += v);
            }
        }
    }
}
