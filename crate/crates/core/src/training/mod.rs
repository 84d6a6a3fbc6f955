//! Losses and the training loops: physics-informed pre-training of the
//! backbone, supervised post-training of the head on the frozen backbone,
//! and the purely supervised baseline.

mod data;
mod loss;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{load_split, Case};
pub use loss::{complete_intensity, data_loss, jacobi_target, physics_loss, physics_target, pixel_weights};

use crate::autodiff::{adam_step, decay_lr, AdamConfig, Tape};
use crate::error::{io_err, json_err, Error, Result};
use crate::fields::PackConfig;
use crate::metrics::mae;
use crate::nets::{Backbone, Head};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_posttrain: usize,
    pub lr: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Track the first non-finite tape value (slower).
    pub nan_guard: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_pretrain: 10,
            epochs_posttrain: 15,
            lr: 1e-3,
            lr_decay: 0.85,
            batch_size: 1,
            eta1: 0.0,
            eta2: 10.0,
            seed: 0,
            adam: AdamConfig::default(),
            nan_guard: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!("batch size {} is not supported (only 1)", self.batch_size)));
        }
        if !(self.eta2 > 0.0) || !(self.eta1 >= 0.0) {
            return Err(Error::Config("weights need eta1 >= 0 and eta2 > 0".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("learning rate must be positive and decay in (0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate of every epoch.
    pub fn schedule(&self, epochs: usize) -> Vec<f64> {
        let mut lr = self.lr;
        (0..epochs)
            .map(|_| {
                let cur = lr;
                lr = decay_lr(lr, self.lr_decay);
                cur
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub case: String,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epoch_mean_loss: Vec<f64>,
    pub lr_trace: Vec<f64>,
    /// Validation MAE per epoch (supervised baseline only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_mae: Vec<f64>,
    /// Epoch whose parameters were kept (supervised baseline only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
    pub wall_seconds: f64,
}

impl TrainLog {
    /// One JSON object per step.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for s in &self.steps {
            serde_json::to_writer(&mut out, s).map_err(json_err(path))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&out).map_err(io_err(path))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<StepRecord>> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(json_err(path))).collect()
    }

    fn close_epoch(&mut self, from: usize) {
        let losses = &self.steps[from..];
        let mean = if losses.is_empty() { 0.0 } else { losses.iter().map(|s| s.loss).sum::<f64>() / losses.len() as f64 };
        self.epoch_mean_loss.push(mean);
    }
}

fn rise_pack(pack: &PackConfig) -> PackConfig {
    PackConfig { t0: 0.0, ..*pack }
}

fn check_loss(loss: f64, case: &Case) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { case: case.id.clone() })
    }
}

fn tape<S: Scalar>(cfg: &TrainConfig) -> Tape<S> {
    Tape::with_nan_guard(cfg.nan_guard)
}

/// Physics-informed pre-training of `backbone` on unlabeled layouts for
/// `epochs_pretrain` epochs, shuffling the cases every epoch.
pub fn pretrain<S: Scalar>(backbone: &mut Backbone<S>, cases: &[Case], cfg: &TrainConfig, pack: &PackConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::EmptySplit("pretrain".into()));
    }
    let start = Instant::now();
    let pack = rise_pack(pack);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut log = TrainLog { lr_trace: cfg.schedule(cfg.epochs_pretrain), ..Default::default() };
    for epoch in 0..cfg.epochs_pretrain {
        let lr = log.lr_trace[epoch];
        order.shuffle(&mut rng);
        let first = log.steps.len();
        for &i in &order {
            let case = &cases[i];
            let tape = tape::<S>(cfg);
            let bound = backbone.params().bind(&tape, true);
            let rise = backbone.rise(&bound, &case.lambda)?;
            let loss = physics_loss(rise, &case.lambda, &pack, cfg.eta1, cfg.eta2)?;
            let value = loss.item().as_f64();
            check_loss(value, case)?;
            tape.backward(loss)?;
            tape.check_finite()?;
            adam_step(backbone.params_mut(), &bound, &cfg.adam, lr)?;
            log.steps.push(StepRecord { epoch, case: case.id.clone(), loss: value, lr });
        }
        log.close_epoch(first);
    }
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

fn truth_rise<S: Scalar>(case: &Case, t0: f64) -> Result<Vec<S>> {
    Ok(case.require_truth()?.values().iter().map(|&t| S::lit(t - t0)).collect())
}

/// Trains `head` on labeled cases with the backbone frozen. The backbone
/// predictions are computed once; its parameter fingerprint is checked
/// before and after.
pub fn posttrain<S: Scalar>(backbone: &Backbone<S>, head: &mut Head<S>, cases: &[Case], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::EmptySplit("labeled".into()));
    }
    let start = Instant::now();
    let fingerprint = backbone.params().fingerprint();
    let t0 = backbone.config().t0;
    let mut cached = Vec::with_capacity(cases.len());
    for case in cases {
        let t_hat = backbone.predict(&case.lambda)?;
        let rise: Vec<S> = t_hat.values().iter().map(|&t| S::lit(t - t0)).collect();
        cached.push((rise, truth_rise::<S>(case, t0)?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut log = TrainLog { lr_trace: cfg.schedule(cfg.epochs_posttrain), ..Default::default() };
    for epoch in 0..cfg.epochs_posttrain {
        let lr = log.lr_trace[epoch];
        order.shuffle(&mut rng);
        let first = log.steps.len();
        for &i in &order {
            let case = &cases[i];
            let (rise, truth) = &cached[i];
            let tape = tape::<S>(cfg);
            let bound = head.params().bind(&tape, true);
            let g = case.grid();
            let rise = tape.constant([1, 1, g.rows(), g.cols()], rise.clone())?;
            let pred = head.rise(&bound, rise, backbone.config(), &case.lambda)?;
            let loss = data_loss(pred, truth, cfg.eta1, cfg.eta2)?;
            let value = loss.item().as_f64();
            check_loss(value, case)?;
            tape.backward(loss)?;
            tape.check_finite()?;
            adam_step(head.params_mut(), &bound, &cfg.adam, lr)?;
            log.steps.push(StepRecord { epoch, case: case.id.clone(), loss: value, lr });
        }
        log.close_epoch(first);
    }
    if backbone.params().fingerprint() != fingerprint {
        return Err(Error::Params("backbone parameters changed during post-training".into()));
    }
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Mean MAE of `net` over cases with ground truth.
pub fn mean_mae<S: Scalar>(net: &Backbone<S>, cases: &[Case]) -> Result<f64> {
    let mut total = 0.0;
    for case in cases {
        total += mae(&net.predict(&case.lambda)?, case.require_truth()?)?;
    }
    Ok(total / cases.len().max(1) as f64)
}

/// Purely supervised training of a full-size UNet with the data loss for
/// `epochs_pretrain + epochs_posttrain` epochs. After every epoch the
/// validation MAE is measured and the best parameters are kept; without
/// validation cases the final parameters are kept.
pub fn train_supervised<S: Scalar>(
    baseline: &mut Backbone<S>,
    labeled: &[Case],
    val: &[Case],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptySplit("labeled".into()));
    }
    let start = Instant::now();
    let epochs = cfg.epochs_pretrain + cfg.epochs_posttrain;
    let t0 = baseline.config().t0;
    let truths = labeled.iter().map(|c| truth_rise::<S>(c, t0)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut log = TrainLog { lr_trace: cfg.schedule(epochs), ..Default::default() };
    let mut best: Option<(f64, usize, crate::autodiff::ModelParams<S>)> = None;
    for epoch in 0..epochs {
        let lr = log.lr_trace[epoch];
        order.shuffle(&mut rng);
        let first = log.steps.len();
        for &i in &order {
            let case = &labeled[i];
            let tape = tape::<S>(cfg);
            let bound = baseline.params().bind(&tape, true);
            let pred = baseline.rise(&bound, &case.lambda)?;
            let loss = data_loss(pred, &truths[i], cfg.eta1, cfg.eta2)?;
            let value = loss.item().as_f64();
            check_loss(value, case)?;
            tape.backward(loss)?;
            tape.check_finite()?;
            adam_step(baseline.params_mut(), &bound, &cfg.adam, lr)?;
            log.steps.push(StepRecord { epoch, case: case.id.clone(), loss: value, lr });
        }
        log.close_epoch(first);
        if !val.is_empty() {
            let score = mean_mae(baseline, val)?;
            log.val_mae.push(score);
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, epoch, baseline.params().clone()));
            }
        }
    }
    match best {
        Some((_, epoch, params)) => {
            *baseline.params_mut() = params;
            log.selected_epoch = Some(epoch);
        }
        None => log.selected_epoch = epochs.checked_sub(1),
    }
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

#[cfg(test)]
mod tests;
