//! Grids, fields, layouts, physical constants and their on-disk formats.

mod field;
mod grid;
mod layout;
mod manifest;
mod pack;

pub use field::{read_field, read_field_raw, write_field, FieldStats, ScalarField, TFLD_MAGIC, TFLD_VERSION};
pub use grid::GridSpec;
pub use layout::{layout_distance, read_layout, write_layout, Geometry, Layout};
pub use manifest::{read_manifest, write_manifest, CaseEntry, DatasetManifest, Split};
pub use pack::{PackConfig, CELL_HEAT_RATE_W_M3, CELL_HEIGHT_M, GREASE_SINK_W_M3K};
