use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform square-pixel grid over the rectangle `[0, width] x [0, height]`.
///
/// Rows run along y, columns along x. Pixel `(i, j)` is centred at
/// `((j + 0.5) h, (i + 0.5) h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    width: f64,
    height: f64,
    step: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, width: f64, height: f64) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::GridTooSmall { rows, cols });
        }
        let dx = width / cols as f64;
        let dy = height / rows as f64;
        if !(dx > 0.0 && dx.is_finite()) || (dx - dy).abs() > 1e-12 * dx.abs().max(dy.abs()) {
            return Err(Error::NonSquarePixels { dx, dy });
        }
        Ok(Self { rows, cols, width, height, step: dx })
    }

    /// Grid from a pixel count and pixel size.
    pub fn from_step(rows: usize, cols: usize, step: f64) -> Result<Self> {
        Self::new(rows, cols, cols as f64 * step, rows as f64 * step)
    }

    /// `n x n` grid on a square of side `side` meters.
    pub fn square(n: usize, side: f64) -> Result<Self> {
        Self::new(n, n, side, side)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Pixel size h in meters.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// `(x, y)` of a pixel centre in meters.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        ((col as f64 + 0.5) * self.step, (row as f64 + 0.5) * self.step)
    }

    /// Same pixel layout, ignoring floating-point noise in the physical size.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && (self.step - other.step).abs() <= 1e-12 * self.step.abs().max(other.step.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_grid_has_square_pixels() {
        let g = GridSpec::square(200, 0.084).unwrap();
        assert!((g.step() - 0.00042).abs() < 1e-15);
        let (x, y) = g.pixel_center(0, 199);
        assert!((x - 199.5 * 0.00042).abs() < 1e-12 && (y - 0.00021).abs() < 1e-15);
    }

    #[test]
    fn rejects_rectangular_pixels_and_tiny_grids() {
        assert!(matches!(GridSpec::new(10, 20, 0.1, 0.1), Err(Error::NonSquarePixels { .. })));
        assert!(matches!(GridSpec::new(2, 3, 0.02, 0.03), Err(Error::GridTooSmall { .. })));
        assert!(GridSpec::new(10, 20, 0.2, 0.1).is_ok());
    }
}
