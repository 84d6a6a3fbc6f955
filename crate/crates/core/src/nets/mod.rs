//! The three networks: the physics-informed UNet backbone, the reduced UNet
//! projection head, and the supervised baseline (a backbone with its own
//! seed).
//!
//! Both UNets work on "rise" fields, `T - T0` in units of the output scale,
//! so the network never has to represent the 25 C offset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ModelParams, Parameter, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fields::{PackConfig, ScalarField};
use crate::scalar::Scalar;

pub const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Channel width of each of the five encoder levels.
    pub widths: Vec<usize>,
    /// Upper bound on GroupNorm groups; a layer uses `min(groups, channels)`.
    pub groups: usize,
    /// Conductivities mapped to indicator values 1 and 0.
    pub lambda_battery: f64,
    pub lambda_coolant: f64,
    /// Output scale `s` in C: `T = t0 + s * raw`.
    pub output_scale: f64,
    pub t0: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        let pack = PackConfig::default();
        Self {
            widths: vec![16, 32, 64, 128, 256],
            groups: 8,
            lambda_battery: pack.lambda_battery,
            lambda_coolant: pack.lambda_coolant,
            output_scale: 1.0,
            t0: pack.t0,
        }
    }
}

impl BackboneConfig {
    pub fn for_pack(pack: &PackConfig) -> Self {
        Self { lambda_battery: pack.lambda_battery, lambda_coolant: pack.lambda_coolant, t0: pack.t0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        check_widths("backbone", &self.widths, 5, self.groups)?;
        if self.lambda_battery == self.lambda_coolant || !self.lambda_battery.is_finite() || !self.lambda_coolant.is_finite() {
            return Err(Error::Config("backbone needs two distinct finite conductivities".into()));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) || !self.t0.is_finite() {
            return Err(Error::Config("backbone output scale must be positive and t0 finite".into()));
        }
        Ok(())
    }

    fn indicator(&self, lambda: f64) -> f64 {
        (lambda - self.lambda_coolant) / (self.lambda_battery - self.lambda_coolant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Channel width of each of the four levels.
    pub widths: Vec<usize>,
    pub groups: usize,
    /// Also feed the battery indicator as a second input channel.
    pub use_lambda: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { widths: vec![8, 16, 32, 64], groups: 8, use_lambda: false }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        check_widths("head", &self.widths, 4, self.groups)
    }
}

fn check_widths(what: &str, widths: &[usize], levels: usize, groups: usize) -> Result<()> {
    if widths.len() != levels {
        return Err(Error::Config(format!("{what} needs {levels} widths, got {}", widths.len())));
    }
    if groups == 0 {
        return Err(Error::Config(format!("{what} group count must be positive")));
    }
    for &w in widths {
        if w == 0 || w % groups.min(w) != 0 {
            return Err(Error::Config(format!("{what} width {w} is not a positive multiple of its group count")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv: Conv,
    scale: usize,
    shift: usize,
    groups: usize,
}

/// Parameter indices of a UNet. With `pool_bottom` every encoder level is
/// pooled and the decoder has as many levels as the encoder; otherwise the
/// last encoder level is an unpooled bottom and the decoder has one fewer.
#[derive(Debug, Clone)]
struct Unet {
    enc: Vec<Vec<Block>>,
    dec: Vec<Vec<Block>>,
    out: Conv,
    act: Act,
    pool_bottom: bool,
}

struct Builder<S> {
    params: ModelParams<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<S> {
    fn add(&mut self, name: String, shape: Vec<usize>, value: Vec<f64>) -> usize {
        let value = value.into_iter().map(S::lit).collect();
        self.params.push(Parameter::new(name, shape, value).expect("builder shapes are consistent"))
    }

    /// He-uniform weights (or zeros) and zero bias.
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, zero: bool) -> Conv {
        let n = c_out * c_in * k * k;
        let bound = (6.0 / (c_in * k * k) as f64).sqrt();
        let w = if zero { vec![0.0; n] } else { (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect() };
        let weight = self.add(format!("{name}.weight"), vec![c_out, c_in, k, k], w);
        let bias = self.add(format!("{name}.bias"), vec![c_out], vec![0.0; c_out]);
        Conv { weight, bias }
    }

    fn block(&mut self, name: &str, c_in: usize, c_out: usize, max_groups: usize) -> Block {
        let conv = self.conv(&format!("{name}.conv"), c_in, c_out, 3, false);
        let scale = self.add(format!("{name}.gn.scale"), vec![c_out], vec![1.0; c_out]);
        let shift = self.add(format!("{name}.gn.shift"), vec![c_out], vec![0.0; c_out]);
        Block { conv, scale, shift, groups: max_groups.min(c_out) }
    }
}

impl Unet {
    fn build<S: Scalar>(
        seed: u64,
        c_in: usize,
        widths: &[usize],
        per_level: usize,
        groups: usize,
        act: Act,
        pool_bottom: bool,
    ) -> (Self, ModelParams<S>) {
        let mut b = Builder { params: ModelParams::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let mut enc = Vec::new();
        let mut c = c_in;
        for (l, &w) in widths.iter().enumerate() {
            let level = (0..per_level)
                .map(|k| {
                    let blk = b.block(&format!("enc{}.{}", l + 1, k + 1), c, w, groups);
                    c = w;
                    blk
                })
                .collect();
            enc.push(level);
        }
        let dec_levels = if pool_bottom { widths.len() } else { widths.len() - 1 };
        let mut dec = vec![Vec::new(); dec_levels];
        for l in (0..dec_levels).rev() {
            let w = widths[l];
            let mut c_level = c + w;
            dec[l] = (0..per_level)
                .map(|k| {
                    let blk = b.block(&format!("dec{}.{}", l + 1, k + 1), c_level, w, groups);
                    c_level = w;
                    blk
                })
                .collect();
            c = w;
        }
        let out = b.conv("out", c, 1, 1, true);
        (Self { enc, dec, out, act, pool_bottom }, b.params)
    }

    /// Spatial sizes must be multiples of this.
    fn divisor(&self) -> usize {
        1 << self.dec.len()
    }

    fn block<'t, S: Scalar>(&self, x: Tensor<'t, S>, blk: &Block, p: &[Tensor<'t, S>]) -> Result<Tensor<'t, S>> {
        let y = x.conv2d(&p[blk.conv.weight], Some(&p[blk.conv.bias]))?;
        let y = y.group_norm(blk.groups, &p[blk.scale], &p[blk.shift], GN_EPS)?;
        Ok(match self.act {
            Act::Gelu => y.gelu(),
            Act::Relu => y.relu(),
        })
    }

    fn forward<'t, S: Scalar>(&self, x: Tensor<'t, S>, p: &[Tensor<'t, S>]) -> Result<Tensor<'t, S>> {
        let mut x = x;
        let mut skips = Vec::with_capacity(self.dec.len());
        for (l, level) in self.enc.iter().enumerate() {
            for blk in level {
                x = self.block(x, blk, p)?;
            }
            if l < self.dec.len() {
                skips.push(x);
                x = x.avg_pool2()?;
            }
        }
        debug_assert!(self.pool_bottom == (self.dec.len() == self.enc.len()));
        for (level, skip) in self.dec.iter().zip(skips).rev() {
            x = x.bilinear_up2().concat_channels(&skip)?;
            for blk in level {
                x = self.block(x, blk, p)?;
            }
        }
        x.conv2d(&p[self.out.weight], Some(&p[self.out.bias]))
    }

    /// Mirror-pads `x` to the next multiple of [`Unet::divisor`], runs the
    /// network and crops back.
    fn forward_padded<'t, S: Scalar>(&self, x: Tensor<'t, S>, p: &[Tensor<'t, S>]) -> Result<Tensor<'t, S>> {
        let [_, _, h, w] = x.shape();
        let d = self.divisor();
        let (ph, pw) = (h.div_ceil(d) * d - h, w.div_ceil(d) * d - w);
        if ph == 0 && pw == 0 {
            return self.forward(x, p);
        }
        let (top, left) = (ph / 2, pw / 2);
        let padded = x.reflect_pad(top, ph - top, left, pw - left);
        self.forward(padded, p)?.crop(top, left, h, w)
    }
}

fn check_bound<S: Scalar>(params: &ModelParams<S>, bound: &[Tensor<'_, S>]) -> Result<()> {
    if bound.len() != params.len() {
        return Err(Error::Params(format!("{} bound tensors for {} parameters", bound.len(), params.len())));
    }
    Ok(())
}

/// Full-size UNet mapping conductivity to temperature.
#[derive(Debug, Clone)]
pub struct Backbone<S> {
    config: BackboneConfig,
    seed: u64,
    net: Unet,
    params: ModelParams<S>,
}

/// Five levels of two conv-GN-GELU blocks with average pooling, a mirrored
/// decoder with bilinear upsampling and skip concatenation, and a
/// zero-initialized 1x1 output convolution.
pub fn build_backbone<S: Scalar>(config: &BackboneConfig, seed: u64) -> Result<Backbone<S>> {
    config.validate()?;
    let (net, params) = Unet::build(seed, 1, &config.widths, 2, config.groups, Act::Gelu, true);
    Ok(Backbone { config: config.clone(), seed, net, params })
}

/// Same architecture as the backbone; callers pass an independent seed.
pub fn build_supervised_baseline<S: Scalar>(config: &BackboneConfig, seed: u64) -> Result<Backbone<S>> {
    build_backbone(config, seed)
}

impl<S: Scalar> Backbone<S> {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<S> {
        &mut self.params
    }

    /// Battery indicator of a conductivity field as a `1x1xHxW` constant.
    pub fn input<'t>(&self, tape: &'t Tape<S>, lambda: &ScalarField) -> Result<Tensor<'t, S>> {
        let g = lambda.grid();
        let v = lambda.values().iter().map(|&l| S::lit(self.config.indicator(l))).collect();
        tape.constant([1, 1, g.rows(), g.cols()], v)
    }

    /// `T_hat - T0` for the parameters in `bound` (from [`ModelParams::bind`]).
    pub fn rise<'t>(&self, bound: &[Tensor<'t, S>], lambda: &ScalarField) -> Result<Tensor<'t, S>> {
        check_bound(&self.params, bound)?;
        let tape = bound.first().ok_or_else(|| Error::Params("backbone has no parameters".into()))?.tape();
        let x = self.input(tape, lambda)?;
        Ok(self.net.forward_padded(x, bound)?.affine(S::lit(self.config.output_scale), S::zero()))
    }

    /// `T_hat = T0 + s * raw`.
    pub fn forward<'t>(&self, bound: &[Tensor<'t, S>], lambda: &ScalarField) -> Result<Tensor<'t, S>> {
        Ok(self.rise(bound, lambda)?.affine(S::one(), S::lit(self.config.t0)))
    }

    /// Inference on a fresh tape; the offset is added in f64.
    pub fn predict(&self, lambda: &ScalarField) -> Result<ScalarField> {
        let tape = Tape::with_nan_guard(false);
        let bound = self.params.bind(&tape, false);
        let rise = self.rise(&bound, lambda)?;
        let t0 = self.config.t0;
        ScalarField::new(*lambda.grid(), rise.value().iter().map(|v| t0 + v.as_f64()).collect())
    }
}

/// Reduced UNet correcting the backbone prediction.
#[derive(Debug, Clone)]
pub struct Head<S> {
    config: HeadConfig,
    seed: u64,
    net: Unet,
    params: ModelParams<S>,
}

/// Four levels of one conv-GN-ReLU block (three pooled, one bottom), a
/// three-level decoder and a zero-initialized 1x1 output convolution.
pub fn build_head<S: Scalar>(config: &HeadConfig, seed: u64) -> Result<Head<S>> {
    config.validate()?;
    let c_in = if config.use_lambda { 2 } else { 1 };
    let (net, params) = Unet::build(seed, c_in, &config.widths, 1, config.groups, Act::Relu, false);
    Ok(Head { config: config.clone(), seed, net, params })
}

impl<S: Scalar> Head<S> {
    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<S> {
        &mut self.params
    }

    /// `T_tilde - T0 = (T_hat - T0) + s * raw`, where the head sees
    /// `(T_hat - T0) / s`. `rise` is the backbone rise, normally a
    /// constant on the tape; `lambda` is needed only with `use_lambda`.
    pub fn rise<'t>(
        &self,
        bound: &[Tensor<'t, S>],
        rise: Tensor<'t, S>,
        backbone: &BackboneConfig,
        lambda: &ScalarField,
    ) -> Result<Tensor<'t, S>> {
        check_bound(&self.params, bound)?;
        let s = backbone.output_scale;
        let mut x = rise.affine(S::lit(1.0 / s), S::zero());
        if self.config.use_lambda {
            let g = lambda.grid();
            let ind = lambda.values().iter().map(|&l| S::lit(backbone.indicator(l))).collect();
            x = x.concat_channels(&rise.tape().constant([1, 1, g.rows(), g.cols()], ind)?)?;
        }
        let raw = self.net.forward_padded(x, bound)?;
        rise.add(&raw.affine(S::lit(s), S::zero()))
    }

    /// Inference from a backbone prediction `t_hat` (in C).
    pub fn predict(&self, t_hat: &ScalarField, backbone: &BackboneConfig, lambda: &ScalarField) -> Result<ScalarField> {
        t_hat.check_same_grid(lambda)?;
        let tape = Tape::with_nan_guard(false);
        let bound = self.params.bind(&tape, false);
        let g = t_hat.grid();
        let t0 = backbone.t0;
        let rise = tape.constant([1, 1, g.rows(), g.cols()], t_hat.values().iter().map(|&t| S::lit(t - t0)).collect())?;
        let out = self.rise(&bound, rise, backbone, lambda)?;
        // Residual form: add the correction to the f64 input, not the rounded rise.
        let raw: Vec<f64> = out.value().iter().zip(rise.value().iter()).map(|(o, r)| (*o - *r).as_f64()).collect();
        ScalarField::new(*g, t_hat.values().iter().zip(raw).map(|(t, c)| t + c).collect())
    }
}
