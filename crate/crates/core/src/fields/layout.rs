use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

/// Tolerance on clearance checks, mm. Clearances exactly at the limit are valid.
const CLEARANCE_TOL_MM: f64 = 1e-9;

/// Pack box and cell geometry, all in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub domain_mm: [f64; 2],
    pub diameter_mm: f64,
    pub gap_cell_mm: f64,
    pub gap_wall_mm: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { domain_mm: [84.0, 84.0], diameter_mm: 21.0, gap_cell_mm: 2.0, gap_wall_mm: 2.0 }
    }
}

impl Geometry {
    pub fn radius_mm(&self) -> f64 {
        0.5 * self.diameter_mm
    }

    /// Minimum allowed centre-to-centre distance.
    pub fn min_center_distance_mm(&self) -> f64 {
        self.diameter_mm + self.gap_cell_mm
    }

    /// Minimum allowed centre-to-wall distance.
    pub fn min_wall_distance_mm(&self) -> f64 {
        self.radius_mm() + self.gap_wall_mm
    }
}

/// Cell centres inside the pack box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    #[serde(flatten)]
    pub geometry: Geometry,
    pub centers_mm: Vec<[f64; 2]>,
}

impl Layout {
    pub fn new(geometry: Geometry, centers_mm: Vec<[f64; 2]>) -> Result<Self> {
        let layout = Self { geometry, centers_mm };
        layout.validate()?;
        Ok(layout)
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self { geometry, centers_mm: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.centers_mm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_mm.is_empty()
    }

    /// Checks geometry sanity and both clearance constraints.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.diameter_mm > 0.0 && g.gap_cell_mm >= 0.0 && g.gap_wall_mm >= 0.0)
            || !(g.domain_mm[0] > 0.0 && g.domain_mm[1] > 0.0)
        {
            return Err(Error::Constraint(format!("degenerate geometry {g:?}")));
        }
        let wall = g.min_wall_distance_mm();
        for (i, c) in self.centers_mm.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(Error::Constraint(format!("cell {i} has a non-finite centre")));
            }
            let clearance = c[0].min(c[1]).min(g.domain_mm[0] - c[0]).min(g.domain_mm[1] - c[1]);
            if clearance < wall - CLEARANCE_TOL_MM {
                return Err(Error::Constraint(format!(
                    "cell-wall clearance: cell {i} centre is {clearance:.4} mm from a wall, needs >= {wall} mm"
                )));
            }
        }
        let min_dist = g.min_center_distance_mm();
        for i in 0..self.centers_mm.len() {
            for j in i + 1..self.centers_mm.len() {
                let d = layout_distance(self.centers_mm[i], self.centers_mm[j]);
                if d < min_dist - CLEARANCE_TOL_MM {
                    return Err(Error::Constraint(format!(
                        "cell-cell clearance: cells {i} and {j} are {d:.4} mm apart, need >= {min_dist} mm"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn layout_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn write_layout(layout: &Layout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(layout).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Reads and validates a layout.
pub fn read_layout(path: impl AsRef<Path>) -> Result<Layout> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let layout: Layout = serde_json::from_str(&text).map_err(json_err(path))?;
    layout.validate()?;
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eight_cells() -> Vec<[f64; 2]> {
        let ticks = [12.5, 42.0, 71.5];
        let mut c: Vec<[f64; 2]> = ticks.iter().flat_map(|&y| ticks.iter().map(move |&x| [x, y])).collect();
        c.pop();
        c
    }

    #[test]
    fn round_trip_preserves_everything() {
        let layout = Layout::new(Geometry::default(), eight_cells()).unwrap();
        assert_eq!(layout.len(), 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.json");
        write_layout(&layout, &path).unwrap();
        assert_eq!(read_layout(&path).unwrap(), layout);
        let text = fs::read_to_string(&path).unwrap();
        for key in ["domain_mm", "diameter_mm", "gap_cell_mm", "gap_wall_mm", "centers_mm"] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn random_coordinates_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        for seed in 0..50 {
            let Ok(layout) = crate::layout::generate_layout(seed, 8, &Geometry::default()) else { continue };
            write_layout(&layout, &a).unwrap();
            let back = read_layout(&a).unwrap();
            for (p, q) in layout.centers_mm.iter().flatten().zip(back.centers_mm.iter().flatten()) {
                assert_eq!(p.to_bits(), q.to_bits(), "seed {seed}");
            }
            write_layout(&back, &b).unwrap();
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        }
    }

    #[test]
    fn too_close_cells_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(
            &path,
            r#"{"domain_mm":[84.0,84.0],"diameter_mm":21.0,"gap_cell_mm":2.0,"gap_wall_mm":2.0,
               "centers_mm":[[20.0,30.0],[42.9,30.0]]}"#,
        )
        .unwrap();
        let err = read_layout(&path).unwrap_err();
        assert!(err.to_string().contains("cell-cell clearance"), "{err}");
    }

    #[test]
    fn wall_clearance_and_ties() {
        let g = Geometry::default();
        assert!(Layout::new(g, vec![[12.4, 40.0]]).unwrap_err().to_string().contains("cell-wall"));
        // exactly at both limits is accepted
        Layout::new(g, vec![[12.5, 40.0], [35.5, 40.0]]).unwrap();
    }

    #[test]
    fn empty_layout_is_valid_and_malformed_json_fails() {
        Layout::new(Geometry::default(), vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(read_layout(&path), Err(Error::Json { .. })));
    }
}
