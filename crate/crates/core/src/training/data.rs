use std::path::Path;

use crate::error::Result;
use crate::fields::{read_field, read_field_raw, read_layout, CaseEntry, DatasetManifest, GridSpec, Layout, ScalarField, Split};
use crate::layout::{battery_mask, BatteryMask};

/// A dataset case loaded into memory.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub layout: Layout,
    pub lambda: ScalarField,
    pub mask: BatteryMask,
    /// Ground-truth temperature, when the case has been solved.
    pub truth: Option<ScalarField>,
}

impl Case {
    pub fn grid(&self) -> &GridSpec {
        self.lambda.grid()
    }

    /// Loads the files of `entry`, resolving paths against `base`. The pixel
    /// step comes from the layout's domain width and the field's column count.
    pub fn load(entry: &CaseEntry, base: &Path) -> Result<Self> {
        let layout = read_layout(base.join(&entry.layout))?;
        let lambda_path = base.join(&entry.conductivity);
        let (_, cols, _) = read_field_raw(&lambda_path)?;
        let step = layout.geometry.domain_mm[0] * 1e-3 / cols as f64;
        let lambda = read_field(&lambda_path, step)?;
        let mask = battery_mask(&layout, lambda.grid())?;
        let truth = match &entry.temperature {
            Some(p) => {
                let t = read_field(base.join(p), step)?;
                t.check_same_grid(&lambda)?;
                Some(t)
            }
            None => None,
        };
        Ok(Self { id: entry.id.clone(), layout, lambda, mask, truth })
    }

    /// Ground truth, or an error naming the case.
    pub fn require_truth(&self) -> Result<&ScalarField> {
        self.truth
            .as_ref()
            .ok_or_else(|| crate::error::Error::Manifest(format!("case {} has no temperature field", self.id)))
    }
}

/// All cases of one split, in manifest order.
pub fn load_split(manifest: &DatasetManifest, base: &Path, split: Split) -> Result<Vec<Case>> {
    manifest.split(split).map(|e| Case::load(e, base)).collect()
}
