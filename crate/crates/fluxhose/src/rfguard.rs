//! Microwave-filter estimates for the hose penetration.
//!
//! The hose must not open a loss channel at qubit and cavity frequencies.
//! Two closed-form checks certify that: the elongated outermost shell acts
//! as a shorted quarter-wave stub, and both the lengthwise cut and the shell
//! bore act as waveguides operated far below cutoff, where propagation is
//! evanescent and the wall attenuates by tens of dB per millimetre.
//!
//! Only the dominant modes are evaluated (TE10 for the rectangular cut,
//! TE11 for the circular bore): they set the least-attenuated leakage path.
//! Vacuum filling is assumed throughout.

use serde::{Deserialize, Serialize};

use crate::constants::C_LIGHT;

/// First root of the derivative of the Bessel function J1, fixing the TE11
/// cutoff of a circular guide.
const TE11_ROOT: f64 = 1.8412;

/// Nepers to decibels.
const DB_PER_NEPER: f64 = 8.685_889_638_065_035;

/// A below-cutoff waveguide section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum WaveguideKind {
    /// Rectangular cross-section, broad wall `a` >= narrow wall `b` [m].
    Rectangular { a: f64, b: f64 },
    /// Circular cross-section of the given inner diameter [m].
    Circular { diameter: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideSpec {
    pub kind: WaveguideKind,
    /// Guide length [m], used for total attenuation.
    pub length: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RfError {
    #[error("waveguide dimensions must be positive, got {0}")]
    NonPositiveDimension(f64),
    #[error("rectangular guide requires a >= b (got a = {a}, b = {b})")]
    SwappedWalls { a: f64, b: f64 },
    #[error("frequency must be non-negative, got {0}")]
    NegativeFrequency(f64),
    #[error("resonator length must be positive, got {0}")]
    NonPositiveLength(f64),
}

impl WaveguideSpec {
    pub fn validate(&self) -> Result<(), RfError> {
        match self.kind {
            WaveguideKind::Rectangular { a, b } => {
                if a <= 0.0 || b <= 0.0 {
                    return Err(RfError::NonPositiveDimension(a.min(b)));
                }
                if a < b {
                    return Err(RfError::SwappedWalls { a, b });
                }
            }
            WaveguideKind::Circular { diameter } => {
                if diameter <= 0.0 {
                    return Err(RfError::NonPositiveDimension(diameter));
                }
            }
        }
        if self.length <= 0.0 {
            return Err(RfError::NonPositiveLength(self.length));
        }
        Ok(())
    }
}

/// Resonance of a shorted quarter-wave stub of the given length, vacuum
/// filling: f = c / 4L.
pub fn quarter_wave(length: f64) -> Result<f64, RfError> {
    if length <= 0.0 {
        return Err(RfError::NonPositiveLength(length));
    }
    Ok(C_LIGHT / (4.0 * length))
}

/// Dominant-mode cutoff frequency [Hz] and below-cutoff attenuation
/// [dB/mm] at frequency `f`. Above cutoff the attenuation is 0.
///
/// Below cutoff the evanescent decay rate is
/// alpha = (2 pi / lambda_c) sqrt(1 - (f/f_c)^2) nepers/m,
/// i.e. 8.686e-3 * (2 pi / lambda_c) * sqrt(1 - (f/f_c)^2) dB/mm.
pub fn cutoff_and_attenuation(spec: &WaveguideSpec, f: f64) -> Result<(f64, f64), RfError> {
    spec.validate()?;
    if f < 0.0 {
        return Err(RfError::NegativeFrequency(f));
    }
    let f_c = match spec.kind {
        WaveguideKind::Rectangular { a, .. } => C_LIGHT / (2.0 * a),
        WaveguideKind::Circular { diameter } => {
            TE11_ROOT * C_LIGHT / (std::f64::consts::PI * diameter)
        }
    };
    if f >= f_c {
        return Ok((f_c, 0.0));
    }
    let lambda_c = C_LIGHT / f_c;
    let ratio = f / f_c;
    let alpha_np_per_m =
        (2.0 * std::f64::consts::PI / lambda_c) * (1.0 - ratio * ratio).sqrt();
    let alpha_db_per_mm = DB_PER_NEPER * 1.0e-3 * alpha_np_per_m;
    Ok((f_c, alpha_db_per_mm))
}
