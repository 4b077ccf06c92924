//! Physical constants used across the crate (SI).

/// Vacuum permeability [H/m].
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Speed of light in vacuum [m/s].
pub const C_LIGHT: f64 = 2.997_924_58e8;

/// Magnetic flux quantum h/2e [Wb].
pub const PHI_0: f64 = 2.067_833_848e-15;
