use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{io_err, Error, Result};

pub const TFLD_MAGIC: &[u8; 4] = b"TFLD";
pub const TFLD_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Scalar quantity sampled at the pixel centres of a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid needs {} values, got {}",
                grid.rows(),
                grid.cols(),
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        assert!(value.is_finite());
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.rows() {
            for j in 0..grid.cols() {
                values.push(f(i, j));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    pub fn stats(&self) -> FieldStats {
        field_stats(&self.values)
    }

    /// Elementwise map, re-checking finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same_shape(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

fn field_stats(values: &[f64]) -> FieldStats {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    FieldStats { min, max, mean: sum / values.len() as f64 }
}

/// Writes a field as TFLD: magic, version, rows, cols (u32 LE), then f64 LE values.
pub fn write_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * field.values.len());
    buf.extend_from_slice(TFLD_MAGIC);
    buf.extend_from_slice(&TFLD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.grid.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(field.grid.cols() as u32).to_le_bytes());
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Reads a TFLD file as `(rows, cols, values)` without physical metadata.
pub fn read_field_raw(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_tfld(&bytes)
}

/// Reads a TFLD file; the format stores no physical size, so the pixel size
/// `step` (meters) is supplied by the caller.
pub fn read_field(path: impl AsRef<Path>, step: f64) -> Result<ScalarField> {
    let (rows, cols, values) = read_field_raw(path)?;
    ScalarField::new(GridSpec::from_step(rows, cols, step)?, values)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn decode_tfld(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} bytes is shorter than the 16-byte header", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != TFLD_MAGIC {
        return Err(Error::BadMagic { expected: "TFLD", found: magic });
    }
    let version = u32_at(bytes, 4);
    if version != TFLD_VERSION {
        return Err(Error::UnsupportedVersion { format: "TFLD", version });
    }
    let rows = u32_at(bytes, 8) as usize;
    let cols = u32_at(bytes, 12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::DimensionMismatch(format!("header {rows}x{cols} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncated(format!(
            "header declares {rows}x{cols} ({expected} payload bytes) but only {} present",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "header declares {rows}x{cols} ({expected} payload bytes) but {} present",
            payload.len()
        )));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, cols, values))
}
