use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell height used to collapse the volumetric 3D rates onto the 2D section, meters.
pub const CELL_HEIGHT_M: f64 = 0.070;
/// Volumetric heat generation of a cell, W/m³.
pub const CELL_HEAT_RATE_W_M3: f64 = 176_405.0;
/// Volumetric sink coefficient of the thermal grease, W/(m³·K).
pub const GREASE_SINK_W_M3K: f64 = 42_857.14;

/// Physical constants of the pack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackConfig {
    /// Battery intensity φ_b, W/m².
    pub phi_battery: f64,
    /// Coolant linear sink coefficient k, W/(m²·K).
    pub sink_coefficient: f64,
    /// Battery conductivity λ_b, W/(m·K).
    pub lambda_battery: f64,
    /// Coolant conductivity λ_c, W/(m·K).
    pub lambda_coolant: f64,
    /// Cold-plate temperature T0, °C.
    pub t0: f64,
}

impl Default for PackConfig {
    fn default() -> Self {
        Self {
            phi_battery: 12_348.35,
            sink_coefficient: 3000.0,
            lambda_battery: 0.89724,
            lambda_coolant: 3.0,
            t0: 25.0,
        }
    }
}

impl PackConfig {
    /// Areal rates from volumetric rates times the cell height.
    pub fn from_volumetric(heat_rate: f64, sink_coefficient: f64, cell_height: f64) -> Self {
        Self {
            phi_battery: heat_rate * cell_height,
            sink_coefficient: sink_coefficient * cell_height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phi_battery", self.phi_battery),
            ("sink_coefficient", self.sink_coefficient),
            ("lambda_battery", self.lambda_battery),
            ("lambda_coolant", self.lambda_coolant),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.t0.is_finite() {
            return Err(Error::Config("t0 must be finite".into()));
        }
        if self.lambda_battery == self.lambda_coolant {
            return Err(Error::Config("battery and coolant conductivities must differ".into()));
        }
        Ok(())
    }

    /// Whether a conductivity value denotes a battery pixel.
    pub fn is_battery_conductivity(&self, lambda: f64) -> bool {
        (lambda - self.lambda_battery).abs() < (lambda - self.lambda_coolant).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_from_volumetric_rates() {
        let d = PackConfig::default();
        let v = PackConfig::from_volumetric(CELL_HEAT_RATE_W_M3, GREASE_SINK_W_M3K, CELL_HEIGHT_M);
        assert!((v.phi_battery - d.phi_battery).abs() < 1e-9);
        assert!((v.sink_coefficient - d.sink_coefficient).abs() <= 0.01);
        d.validate().unwrap();
    }

    #[test]
    fn rejects_nonpositive_constants() {
        let c = PackConfig { sink_coefficient: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PackConfig { lambda_battery: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
