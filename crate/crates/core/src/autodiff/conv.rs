use super::{numel, GradBuf, Node, Op, Shape, Tensor};
use crate::error::{Error, Result};
use crate::physics::reflect;
use crate::scalar::{gemm, Scalar, Strides};

pub(super) struct Saved<S> {
    input: usize,
    weight: usize,
    bias: Option<usize>,
    kernel: usize,
    /// Per-batch im2col matrices of a 3x3 convolution, kept for the weight gradient.
    cols: Option<Vec<Vec<S>>>,
}

/// Column offsets of a 3x3 tap: `map[kx][x] = reflect(x + kx - 1)`.
fn tap_map(n: usize) -> [Vec<usize>; 3] {
    std::array::from_fn(|k| (0..n).map(|x| reflect(x as isize + k as isize - 1, n)).collect())
}

/// `[c*9, h*w]` patch matrix with mirrored borders.
fn im2col3<S: Scalar>(x: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let hw = h * w;
    let mut out = vec![S::zero(); c * 9 * hw];
    let xmap = tap_map(w);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut out[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = reflect(y as isize + ky as isize - 1, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    for (d, &sx) in dst.iter_mut().zip(&xmap[kx]) {
                        *d = src[sx];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col3`]: scatters patch gradients back onto the image.
fn col2im3<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, dx: &mut [S]) {
    let hw = h * w;
    let xmap = tap_map(w);
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = reflect(y as isize + ky as isize - 1, h);
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    for (&g, &sx) in row[y * w..(y + 1) * w].iter().zip(&xmap[kx]) {
                        dst[sx] += g;
                    }
                }
            }
        }
    }
}

impl<'t, S: Scalar> Tensor<'t, S> {
    /// Stride-1 cross-correlation with a `[c_out, c_in, k, k]` weight,
    /// `k` in {1, 3}. 3x3 kernels use one pixel of mirror padding so the
    /// output keeps the input's spatial size. `bias` has `c_out` elements.
    pub fn conv2d(&self, weight: &Tensor<'t, S>, bias: Option<&Tensor<'t, S>>) -> Result<Tensor<'t, S>> {
        self.same_tape(weight);
        let [n, c_in, h, w] = self.shape();
        let [c_out, wc_in, kh, kw] = weight.shape();
        if wc_in != c_in || kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::Shape(format!("conv2d of input {:?} with weight {:?}", self.shape(), weight.shape())));
        }
        if let Some(b) = bias {
            self.same_tape(b);
            if b.numel() != c_out {
                return Err(Error::Shape(format!("conv2d bias has {} elements for {c_out} channels", b.numel())));
            }
        }
        let kernel = kh;
        let k = c_in * kernel * kernel;
        let hw = h * w;
        let x = self.value();
        let wv = weight.value();
        let bv = bias.map(|b| b.value());
        let mut out = vec![S::zero(); n * c_out * hw];
        let keep_cols = kernel == 3 && weight.requires_grad();
        let mut saved_cols = Vec::new();
        for b in 0..n {
            let xb = &x[b * c_in * hw..(b + 1) * c_in * hw];
            let ob = &mut out[b * c_out * hw..(b + 1) * c_out * hw];
            let cols_owned;
            let cols: &[S] = if kernel == 3 {
                cols_owned = im2col3(xb, c_in, h, w);
                &cols_owned
            } else {
                cols_owned = Vec::new();
                xb
            };
            gemm(&wv, Strides::row_major(c_out, k), cols, Strides::row_major(k, hw), S::zero(), ob, Strides::row_major(c_out, hw));
            if let Some(bv) = &bv {
                for (co, row) in ob.chunks_exact_mut(hw).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
            if keep_cols {
                saved_cols.push(cols_owned);
            }
        }
        let rg = self.requires_grad() || weight.requires_grad() || bias.is_some_and(|b| b.requires_grad());
        let saved = Saved {
            input: self.id,
            weight: weight.id,
            bias: bias.map(|b| b.id),
            kernel,
            cols: keep_cols.then_some(saved_cols),
        };
        Ok(self.tape.push([n, c_out, h, w], out, rg, Op::Conv2d(saved)))
    }
}

pub(super) fn backward<S: Scalar>(saved: &Saved<S>, out_shape: Shape, g: &[S], nodes: &[Node<S>], buf: &mut GradBuf<S>) {
    let [n, c_out, h, w] = out_shape;
    let hw = h * w;
    let x = nodes[saved.input].value.clone();
    let wv = nodes[saved.weight].value.clone();
    let c_in = nodes[saved.input].shape[1];
    let kk = saved.kernel * saved.kernel;
    let k = c_in * kk;
    debug_assert_eq!(numel(&nodes[saved.weight].shape), c_out * k);

    if let Some(bias) = saved.bias {
        if let Some(db) = buf.slot(bias, nodes) {
            for b in 0..n {
                for (co, row) in g[b * c_out * hw..(b + 1) * c_out * hw].chunks_exact(hw).enumerate() {
                    db[co] += row.iter().copied().sum::<S>();
                }
            }
        }
    }
    if let Some(dw) = buf.slot(saved.weight, nodes) {
        for b in 0..n {
            let gb = &g[b * c_out * hw..(b + 1) * c_out * hw];
            let cols: &[S] = match &saved.cols {
                Some(cols) => &cols[b],
                None => &x[b * c_in * hw..(b + 1) * c_in * hw],
            };
            gemm(gb, Strides::row_major(c_out, hw), cols, Strides::transposed(k, hw), S::one(), dw, Strides::row_major(c_out, k));
        }
    }
    if let Some(dx) = buf.slot(saved.input, nodes) {
        let mut dcols = if saved.kernel == 3 { vec![S::zero(); k * hw] } else { Vec::new() };
        for b in 0..n {
            let gb = &g[b * c_out * hw..(b + 1) * c_out * hw];
            let dxb = &mut dx[b * c_in * hw..(b + 1) * c_in * hw];
            if saved.kernel == 3 {
                gemm(&wv, Strides::transposed(c_out, k), gb, Strides::row_major(c_out, hw), S::zero(), &mut dcols, Strides::row_major(k, hw));
                col2im3(&dcols, c_in, h, w, dxb);
            } else {
                gemm(&wv, Strides::transposed(c_out, k), gb, Strides::row_major(c_out, hw), S::one(), dxb, Strides::row_major(k, hw));
            }
        }
    }
}
