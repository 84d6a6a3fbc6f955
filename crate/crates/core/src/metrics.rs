//! Evaluation indices: MAE, battery-region MAE, maximum absolute error and
//! the error of the peak temperature, per case and averaged over a split.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};
use crate::fields::ScalarField;
use crate::layout::BatteryMask;
use crate::training::Case;

fn abs_errors<'a>(pred: &'a ScalarField, truth: &'a ScalarField) -> Result<impl Iterator<Item = f64> + 'a> {
    pred.check_same_grid(truth)?;
    Ok(pred.values().iter().zip(truth.values()).map(|(p, t)| (p - t).abs()))
}

pub fn mae(pred: &ScalarField, truth: &ScalarField) -> Result<f64> {
    Ok(abs_errors(pred, truth)?.sum::<f64>() / pred.values().len() as f64)
}

/// MAE over battery pixels only.
pub fn bmae(pred: &ScalarField, truth: &ScalarField, mask: &BatteryMask) -> Result<f64> {
    if !mask.grid().same_shape(pred.grid()) {
        return Err(Error::GridMismatch);
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let total: f64 = abs_errors(pred, truth)?.zip(mask.flags()).filter(|(_, &b)| b).map(|(e, _)| e).sum();
    Ok(total / n as f64)
}

pub fn max_ae(pred: &ScalarField, truth: &ScalarField) -> Result<f64> {
    Ok(abs_errors(pred, truth)?.fold(0.0, f64::max))
}

/// `|max(pred) - max(truth)|`.
pub fn mt_ae(pred: &ScalarField, truth: &ScalarField) -> Result<f64> {
    pred.check_same_grid(truth)?;
    Ok((pred.stats().max - truth.stats().max).abs())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Indices {
    pub mae: f64,
    pub bmae: f64,
    pub max_ae: f64,
    pub mt_ae: f64,
}

impl Indices {
    pub fn compute(pred: &ScalarField, truth: &ScalarField, mask: &BatteryMask) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, truth)?,
            bmae: bmae(pred, truth, mask)?,
            max_ae: max_ae(pred, truth)?,
            mt_ae: mt_ae(pred, truth)?,
        })
    }

    /// Arithmetic mean of each index.
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a Indices>) -> Self {
        let (mut sum, mut n) = (Indices::default(), 0usize);
        for r in rows {
            sum.mae += r.mae;
            sum.bmae += r.bmae;
            sum.max_ae += r.max_ae;
            sum.mt_ae += r.mt_ae;
            n += 1;
        }
        if n == 0 {
            return sum;
        }
        let n = n as f64;
        Self { mae: sum.mae / n, bmae: sum.bmae / n, max_ae: sum.max_ae / n, mt_ae: sum.mt_ae / n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    #[serde(flatten)]
    pub indices: Indices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub cases: Vec<CaseReport>,
    pub mean: Indices,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, split: impl Into<String>, cases: Vec<CaseReport>) -> Self {
        let mean = Indices::mean(cases.iter().map(|c| &c.indices));
        Self { model: model.into(), split: split.into(), cases, mean }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(json_err(path))
    }

    /// One row per case: `id,mae,bmae,max_ae,mt_ae`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,mae,bmae,max_ae,mt_ae\n");
        for c in &self.cases {
            let i = &c.indices;
            let _ = writeln!(out, "{},{},{},{},{}", c.id, i.mae, i.bmae, i.max_ae, i.mt_ae);
        }
        out
    }
}

/// Runs `predict` on every case and scores it against the case's ground
/// truth with the case's battery mask.
pub fn evaluate(
    model: &str,
    split: &str,
    cases: &[Case],
    mut predict: impl FnMut(&Case) -> Result<ScalarField>,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let pred = predict(case)?;
        let indices = Indices::compute(&pred, case.require_truth()?, &case.mask)?;
        rows.push(CaseReport { id: case.id.clone(), indices });
    }
    Ok(EvalReport::new(model, split, rows))
}

/// `(baseline - candidate) / baseline`: the fraction by which `candidate`
/// improves on `baseline`.
pub fn relative_improvement(candidate: f64, baseline: f64) -> f64 {
    (baseline - candidate) / baseline
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;

    fn fields() -> (ScalarField, BatteryMask) {
        let grid = GridSpec::square(4, 0.004).unwrap();
        let truth = ScalarField::from_fn(grid, |i, j| 25.0 + i as f64 * 0.3 + j as f64 * 0.01).unwrap();
        let mask = BatteryMask::new(grid, (0..16).map(|p| p % 3 == 0).collect()).unwrap();
        (truth, mask)
    }

    #[test]
    fn identical_fields_score_zero() {
        let (t, mask) = fields();
        assert_eq!(Indices::compute(&t, &t, &mask).unwrap(), Indices::default());
    }

    #[test]
    fn constant_offset_gives_offset_everywhere() {
        let (t, mask) = fields();
        let p = t.map(|v| v + 0.1).unwrap();
        let i = Indices::compute(&p, &t, &mask).unwrap();
        for v in [i.mae, i.bmae, i.max_ae, i.mt_ae] {
            assert!((v - 0.1).abs() < 1e-12, "{i:?}");
        }
    }

    #[test]
    fn hand_values_and_bounds() {
        let grid = GridSpec::square(3, 0.003).unwrap();
        let truth = ScalarField::constant(grid, 25.0);
        let pred = ScalarField::new(grid, vec![25.0, 25.5, 24.0, 25.0, 25.0, 25.0, 25.0, 25.0, 25.3]).unwrap();
        let mut flags = vec![false; 9];
        flags[1] = true;
        flags[8] = true;
        let mask = BatteryMask::new(grid, flags).unwrap();
        let i = Indices::compute(&pred, &truth, &mask).unwrap();
        assert!((i.mae - 1.8 / 9.0).abs() < 1e-12);
        assert!((i.bmae - 0.4).abs() < 1e-12);
        assert_eq!(i.max_ae, 1.0);
        assert!((i.mt_ae - 0.5).abs() < 1e-12);
        assert!(i.mae <= i.max_ae && i.bmae <= i.max_ae && i.mt_ae <= i.max_ae);
    }

    #[test]
    fn shift_invariance() {
        let (t, mask) = fields();
        let p = t.map(|v| v * 1.01 - 0.2).unwrap();
        let a = Indices::compute(&p, &t, &mask).unwrap();
        let b = Indices::compute(&p.map(|v| v + 7.0).unwrap(), &t.map(|v| v + 7.0).unwrap(), &mask).unwrap();
        for (x, y) in [(a.mae, b.mae), (a.bmae, b.bmae), (a.max_ae, b.max_ae), (a.mt_ae, b.mt_ae)] {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let (t, _) = fields();
        let mask = BatteryMask::new(*t.grid(), vec![false; 16]).unwrap();
        assert!(matches!(bmae(&t, &t, &mask), Err(Error::EmptyMask)));
    }

    #[test]
    fn report_mean_is_mean_of_rows_and_round_trips() {
        let rows = vec![
            CaseReport { id: "a".into(), indices: Indices { mae: 0.1, bmae: 0.2, max_ae: 0.5, mt_ae: 0.05 } },
            CaseReport { id: "b".into(), indices: Indices { mae: 0.3, bmae: 0.1, max_ae: 0.9, mt_ae: 0.15 } },
        ];
        let r = EvalReport::new("pi", "test", rows);
        assert!((r.mean.mae - 0.2).abs() < 1e-15 && (r.mean.max_ae - 0.7).abs() < 1e-15);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        r.write_json(&path).unwrap();
        assert_eq!(EvalReport::read_json(&path).unwrap(), r);
        assert_eq!(r.to_csv().lines().count(), 3);
        assert!((relative_improvement(0.036, 0.0434) - 0.1705).abs() < 1e-3);
    }
}
