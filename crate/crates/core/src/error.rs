use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid must have at least 3x3 nodes, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("pixels are not square: width/cols = {dx} m but height/rows = {dy} m")]
    NonSquarePixels { dx: f64, dy: f64 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: &'static str, found: [u8; 4] },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("layout constraint violated: {0}")]
    Constraint(String),
    #[error("placed {placed} of {requested} cells before exhausting the budget of {budget} rejected attempts")]
    PlacementBudget { placed: usize, requested: usize, budget: usize },
    #[error("grid domain {grid_mm:?} mm does not match layout domain {layout_mm:?} mm")]
    DomainMismatch { grid_mm: [f64; 2], layout_mm: [f64; 2] },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("no convergence after {iterations} sweeps (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("dense solver is capped at {cap}x{cap} grids, got {rows}x{cols}")]
    GridTooLarge { rows: usize, cols: usize, cap: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty battery mask")]
    EmptyMask,
    #[error("empty {0} split")]
    EmptySplit(String),
    #[error("non-finite loss at case {case}")]
    NonFiniteLoss { case: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("parameter file: {0}")]
    Params(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
