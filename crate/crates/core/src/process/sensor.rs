//! Solid-concentration sensor chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants linking the third moment of the NDF to the solid concentration
/// `C_s = rho_s k_v / M_e * int psi x^3 dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Solid density, kg/m^3.
    pub rho_s: f64,
    /// Volumetric shape factor (pi/6 for spheres).
    pub k_v: f64,
    /// Solvent mass, kg.
    pub m_e: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { rho_s: 1.0, k_v: 1.0, m_e: 1.0 }
    }
}

impl SensorModel {
    pub fn new(rho_s: f64, k_v: f64, m_e: f64) -> Result<Self> {
        let sensor = SensorModel { rho_s, k_v, m_e };
        sensor.validate()?;
        Ok(sensor)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho_s", self.rho_s), ("k_v", self.k_v), ("m_e", self.m_e)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("sensor constant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn gain(&self) -> f64 {
        self.rho_s * self.k_v / self.m_e
    }

    /// Solid concentration (kg/kg) from the third moment.
    pub fn concentration_from_moment(&self, y: f64) -> f64 {
        self.gain() * y
    }

    /// Third moment from the solid concentration.
    pub fn moment_from_concentration(&self, c_s: f64) -> f64 {
        c_s / self.gain()
    }
}

pub fn concentration_from_moment(y: f64, sensor: &SensorModel) -> f64 {
    sensor.concentration_from_moment(y)
}

pub fn moment_from_concentration(c_s: f64, sensor: &SensorModel) -> f64 {
    sensor.moment_from_concentration(c_s)
}
