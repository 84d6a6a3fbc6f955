//! Random layout generation and rasterization onto the pixel grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{Geometry, GridSpec, Layout, PackConfig, ScalarField};

pub const DEFAULT_ATTEMPT_BUDGET: usize = 10_000;

/// Pixels whose centre lies strictly inside some cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryMask {
    grid: GridSpec,
    flags: Vec<bool>,
}

impl BatteryMask {
    pub fn new(grid: GridSpec, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!("mask needs {} flags, got {}", grid.len(), flags.len())));
        }
        Ok(Self { grid, flags })
    }

    /// Battery pixels of a conductivity field.
    pub fn from_conductivity(lambda: &ScalarField, pack: &PackConfig) -> Self {
        let flags = lambda.values().iter().map(|&l| pack.is_battery_conductivity(l)).collect();
        Self { grid: *lambda.grid(), flags }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_battery(&self, row: usize, col: usize) -> bool {
        self.flags[self.grid.index(row, col)]
    }
}

/// Consecutive rejections of one cell after which the partial layout is
/// treated as jammed and placement starts over.
pub const JAM_THRESHOLD: usize = 200;

/// Places `n_cells` cells by sequential rejection sampling.
///
/// Each cell is drawn uniformly from the box of admissible centres and
/// rejected if it violates the cell-cell clearance against any cell already
/// placed. Sequential placement jams often at 8 cells in 84 mm (no room is
/// left for the last cell), so after [`JAM_THRESHOLD`] consecutive rejections
/// the partial layout is discarded and placement restarts on the same random
/// stream. More than `budget` rejections in total is an error.
pub fn generate_layout_with_budget(seed: u64, n_cells: usize, geometry: &Geometry, budget: usize) -> Result<Layout> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wall = geometry.min_wall_distance_mm();
    let min_dist = geometry.min_center_distance_mm();
    let (x_lo, x_hi) = (wall, geometry.domain_mm[0] - wall);
    let (y_lo, y_hi) = (wall, geometry.domain_mm[1] - wall);
    if n_cells > 0 && (x_lo > x_hi || y_lo > y_hi) {
        return Err(Error::PlacementBudget { placed: 0, requested: n_cells, budget });
    }
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(n_cells);
    let (mut rejected, mut streak, mut best) = (0, 0, 0);
    while centers.len() < n_cells {
        let c = [rng.gen_range(x_lo..=x_hi), rng.gen_range(y_lo..=y_hi)];
        if centers.iter().all(|&p| crate::fields::layout_distance(p, c) >= min_dist) {
            centers.push(c);
            best = best.max(centers.len());
            streak = 0;
            continue;
        }
        rejected += 1;
        streak += 1;
        if rejected > budget {
            return Err(Error::PlacementBudget { placed: best, requested: n_cells, budget });
        }
        if streak >= JAM_THRESHOLD {
            centers.clear();
            streak = 0;
        }
    }
    Layout::new(*geometry, centers)
}

pub fn generate_layout(seed: u64, n_cells: usize, geometry: &Geometry) -> Result<Layout> {
    generate_layout_with_budget(seed, n_cells, geometry, DEFAULT_ATTEMPT_BUDGET)
}

fn check_domain(layout: &Layout, grid: &GridSpec) -> Result<()> {
    let grid_mm = [grid.width() * 1e3, grid.height() * 1e3];
    let layout_mm = layout.geometry.domain_mm;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    if close(grid_mm[0], layout_mm[0]) && close(grid_mm[1], layout_mm[1]) {
        Ok(())
    } else {
        Err(Error::DomainMismatch { grid_mm, layout_mm })
    }
}

pub fn battery_mask(layout: &Layout, grid: &GridSpec) -> Result<BatteryMask> {
    check_domain(layout, grid)?;
    let r = layout.geometry.radius_mm() * 1e-3;
    let r2 = r * r;
    let centers: Vec<(f64, f64)> = layout.centers_mm.iter().map(|c| (c[0] * 1e-3, c[1] * 1e-3)).collect();
    let mut flags = Vec::with_capacity(grid.len());
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            let (x, y) = grid.pixel_center(i, j);
            flags.push(centers.iter().any(|&(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2) < r2));
        }
    }
    BatteryMask::new(*grid, flags)
}

/// λ_b inside cells, λ_c elsewhere.
pub fn rasterize_conductivity(layout: &Layout, grid: &GridSpec, pack: &PackConfig) -> Result<ScalarField> {
    let mask = battery_mask(layout, grid)?;
    let values = mask.flags().iter().map(|&b| if b { pack.lambda_battery } else { pack.lambda_coolant }).collect();
    ScalarField::new(*grid, values)
}

/// φ_b inside cells, zero elsewhere (the coolant sink depends on T and is left out).
pub fn rasterize_initial_intensity(layout: &Layout, grid: &GridSpec, pack: &PackConfig) -> Result<ScalarField> {
    let mask = battery_mask(layout, grid)?;
    let values = mask.flags().iter().map(|&b| if b { pack.phi_battery } else { 0.0 }).collect();
    ScalarField::new(*grid, values)
}
