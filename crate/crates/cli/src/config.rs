//! Run configuration and model sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use packtherm::fields::{Geometry, GridSpec, PackConfig};
use packtherm::nets::{BackboneConfig, HeadConfig};
use packtherm::solver::SolveOptions;
use packtherm::training::TrainConfig;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// Number of cases per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitCounts {
    pub pretrain: usize,
    pub labeled: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self { pretrain: 200, labeled: 20, val: 20, test: 50 }
    }
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.pretrain + self.labeled + self.val + self.test
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.pretrain, self.labeled, self.val, self.test]
    }

    /// Splits `count` cases in the proportions of `self` (largest remainder).
    pub fn scaled(&self, count: usize) -> Self {
        let weights = self.as_array();
        let total = self.total().max(1) as f64;
        let exact: Vec<f64> = weights.iter().map(|&w| w as f64 * count as f64 / total).collect();
        let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let missing = count - out.iter().sum::<usize>();
        for &i in order.iter().take(missing) {
            out[i] += 1;
        }
        Self { pretrain: out[0], labeled: out[1], val: out[2], test: out[3] }
    }
}

/// Everything one end-to-end run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; dataset, initializations and shuffling derive from it.
    pub seed: u64,
    pub grid: usize,
    pub cells: usize,
    pub splits: SplitCounts,
    pub pack: PackConfig,
    pub geometry: Geometry,
    pub solver: SolveOptions,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: 64,
            cells: 8,
            splits: SplitCounts::default(),
            pack: PackConfig::default(),
            geometry: Geometry::default(),
            solver: SolveOptions::default(),
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Seed offsets of the independent random streams of a run.
pub const SEED_DATASET: u64 = 0;
pub const SEED_BACKBONE: u64 = 1;
pub const SEED_HEAD: u64 = 2;
pub const SEED_SUPERVISED: u64 = 3;

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    /// Fills derived fields and checks consistency. The backbone's input
    /// normalization and output offset always follow the pack.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.pack.validate()?;
        self.solver.validate()?;
        self.backbone.lambda_battery = self.pack.lambda_battery;
        self.backbone.lambda_coolant = self.pack.lambda_coolant;
        self.backbone.t0 = self.pack.t0;
        self.backbone.validate()?;
        self.head.validate()?;
        self.train.seed = self.seed;
        self.train.validate()?;
        if self.geometry.domain_mm[0] != self.geometry.domain_mm[1] {
            bail!("only square pack domains are supported");
        }
        self.grid_spec()?;
        Ok(self)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        Ok(GridSpec::square(self.grid, self.geometry.domain_mm[0] * 1e-3)?)
    }

    pub fn derived_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_mul(1000).wrapping_add(stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Physics-informed backbone alone.
    Backbone,
    /// Frozen backbone followed by the projection head.
    Pipeline,
    /// Supervised baseline.
    Supervised,
}

/// JSON written next to every weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub kind: ModelKind,
    pub seed: u64,
    pub backbone: BackboneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadConfig>,
    pub train: TrainConfig,
    /// Backbone weights of a pipeline, relative to this card's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_weights: Option<PathBuf>,
}

pub fn card_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn log_path(weights: &Path) -> PathBuf {
    weights.with_extension("log.jsonl")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
