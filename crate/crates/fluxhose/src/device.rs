//! Transmon flux-to-frequency physics.
//!
//! An asymmetric SQUID tunes the Josephson energy with the reduced flux
//! phi = Phi/Phi0 as
//!
//!   E_J(phi) = E_Jsum * sqrt(cos^2(pi phi) + d^2 sin^2(pi phi)),
//!
//! bounded between d*E_Jsum at half flux and E_Jsum at integer flux. The
//! transition frequency uses the transmon approximation
//! f01 = sqrt(8 E_J E_C) - E_C with E_C identified with the measured
//! anharmonicity magnitude. Two qubits sharing the bias line couple with a
//! fixed g, producing an avoided crossing of splitting 2g.
//!
//! All energies and frequencies are in Hz. Functions here are pure; the
//! flux-map fit is single threaded and deterministic for a fixed input
//! ordering.

use serde::{Deserialize, Serialize};

use crate::constants::PHI_0;

mod fit;
pub use fit::{fit_fluxmap, FitOptions, FitReport, PARAMETER_NAMES};

/// SQUID-asymmetry transmon parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmonSpec {
    /// Maximum 0-1 transition frequency [Hz].
    pub f_max: f64,
    /// Charging energy, identified with the anharmonicity magnitude [Hz].
    pub e_c: f64,
    /// Junction asymmetry, 0 <= d < 1.
    pub d: f64,
}

impl TransmonSpec {
    pub fn new(f_max: f64, e_c: f64, d: f64) -> Result<Self, DeviceError> {
        let spec = Self { f_max, e_c, d };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.f_max > 0.0) || !(self.e_c > 0.0) {
            return Err(DeviceError::InvalidSpec(format!(
                "f_max and e_c must be > 0, got {} and {}",
                self.f_max, self.e_c
            )));
        }
        if !(0.0..1.0).contains(&self.d) {
            return Err(DeviceError::InvalidSpec(format!(
                "asymmetry d must be in [0, 1), got {}",
                self.d
            )));
        }
        if self.e_j_sum() <= self.e_c {
            return Err(DeviceError::InvalidSpec(
                "derived E_Jsum does not exceed E_C; not a transmon".into(),
            ));
        }
        Ok(())
    }

    /// Total Josephson energy fixed by f01(0) = f_max [Hz]:
    /// E_Jsum = (f_max + e_c)^2 / (8 e_c).
    pub fn e_j_sum(&self) -> f64 {
        let top = self.f_max + self.e_c;
        top * top / (8.0 * self.e_c)
    }
}

/// Linear map from applied bias to reduced flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxTransfer {
    /// Flux quanta per unit bias.
    pub k: f64,
    /// Flux quanta at zero bias, in (-0.5, 0.5].
    pub offset: f64,
}

impl FluxTransfer {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if !self.k.is_finite() {
            return Err(DeviceError::InvalidSpec("transfer k must be finite".into()));
        }
        if !(self.offset > -0.5 && self.offset <= 0.5) {
            return Err(DeviceError::InvalidSpec(format!(
                "offset must lie in (-0.5, 0.5], got {}",
                self.offset
            )));
        }
        Ok(())
    }

    pub fn phi(&self, bias: f64) -> f64 {
        self.k * bias + self.offset
    }
}

/// Two transmons sharing one bias line, with per-qubit flux transfer and a
/// fixed transverse coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledPairSpec {
    pub q1: TransmonSpec,
    pub q2: TransmonSpec,
    pub t1: FluxTransfer,
    pub t2: FluxTransfer,
    /// Qubit-qubit coupling [Hz].
    pub g: f64,
}

impl CoupledPairSpec {
    pub fn validate(&self) -> Result<(), DeviceError> {
        self.q1.validate()?;
        self.q2.validate()?;
        self.t1.validate()?;
        self.t2.validate()?;
        if self.g < 0.0 {
            return Err(DeviceError::InvalidSpec(format!(
                "coupling g must be >= 0, got {}",
                self.g
            )));
        }
        Ok(())
    }
}

/// Which dressed branch a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Upper,
    Lower,
}

/// One spectroscopy record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxMapRecord {
    pub bias: f64,
    /// Qubit index, 0 or 1, labelling the adiabatically continued trace.
    pub qubit: u8,
    pub branch: Branch,
    pub frequency: f64,
}

/// Bias-ordered spectroscopy table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FluxMapTable {
    pub records: Vec<FluxMapRecord>,
}

impl FluxMapTable {
    /// CSV with header `bias,qubit,branch,frequency_hz`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bias,qubit,branch,frequency_hz\n");
        for r in &self.records {
            let branch = match r.branch {
                Branch::Upper => "upper",
                Branch::Lower => "lower",
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::cli::fmt_f64(r.bias),
                r.qubit,
                branch,
                crate::cli::fmt_f64(r.frequency)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DeviceError> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("bias")) {
                continue;
            }
            let mut fields = line.split(',');
            let parse_err = |what: &str| {
                DeviceError::InvalidTable(format!("line {}: bad {what}", lineno + 1))
            };
            let bias: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err("bias"))?;
            let qubit: u8 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err("qubit"))?;
            let branch = match fields.next().map(str::trim) {
                Some("upper") => Branch::Upper,
                Some("lower") => Branch::Lower,
                _ => return Err(parse_err("branch")),
            };
            let frequency: f64 = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| parse_err("frequency"))?;
            records.push(FluxMapRecord { bias, qubit, branch, frequency });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeviceError {
    #[error("invalid device parameters: {0}")]
    InvalidSpec(String),
    #[error("E_J(phi) = {e_j:.3e} Hz does not exceed E_C = {e_c:.3e} Hz; outside the transmon regime")]
    Regime { e_j: f64, e_c: f64 },
    #[error("flux map table: {0}")]
    InvalidTable(String),
    #[error("insufficient data: {0}")]
    Arity(String),
    #[error("normal matrix is singular; parameter `{parameter}` is not identifiable from the data")]
    Degenerate { parameter: String },
    #[error("fit did not converge within {0} iterations")]
    NoConvergence(usize),
}

/// Josephson energy at reduced flux phi [Hz]: even, period 1, bounded in
/// [d, 1] * E_Jsum.
pub fn ej_of_flux(spec: &TransmonSpec, phi: f64) -> f64 {
    let angle = std::f64::consts::PI * phi;
    let c = angle.cos();
    let s = angle.sin();
    spec.e_j_sum() * (c * c + spec.d * spec.d * s * s).sqrt()
}

/// Transition frequency at reduced flux phi [Hz]:
/// f01 = sqrt(8 E_J(phi) E_C) - E_C, valid while E_J stays above E_C.
pub fn f01(spec: &TransmonSpec, phi: f64) -> Result<f64, DeviceError> {
    let e_j = ej_of_flux(spec, phi);
    if e_j <= spec.e_c {
        return Err(DeviceError::Regime { e_j, e_c: spec.e_c });
    }
    Ok((8.0 * e_j * spec.e_c).sqrt() - spec.e_c)
}

/// Dressed frequencies of two coupled transitions:
/// (f_plus, f_minus, f_two_photon) with
/// f_pm = mean +- sqrt(delta^2/4 + g^2) and the two-photon line at the mean.
pub fn coupled_spectrum(f1: f64, f2: f64, g: f64) -> (f64, f64, f64) {
    let mean = 0.5 * (f1 + f2);
    let half_delta = 0.5 * (f1 - f2);
    let split = (half_delta * half_delta + g * g).sqrt();
    (mean + split, mean - split, mean)
}

/// Bias points whose transmon-regime failures were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedPoint {
    pub bias: f64,
    pub qubit: u8,
}

/// Simulates the two-qubit flux map over the given biases. Branch labels
/// follow each qubit's trace by adiabatic continuation in bias order, with
/// ties broken toward the branch closer to the previous point. Points where
/// a qubit leaves the transmon regime are dropped and flagged.
pub fn synth_fluxmap(
    pair: &CoupledPairSpec,
    biases: &[f64],
) -> Result<(FluxMapTable, Vec<DroppedPoint>), DeviceError> {
    pair.validate()?;
    if biases.iter().any(|b| !b.is_finite()) {
        return Err(DeviceError::InvalidSpec("biases must be finite".into()));
    }
    let mut table = FluxMapTable::default();
    let mut dropped = Vec::new();
    // Previous assigned frequency per qubit, for continuation.
    let mut prev: [Option<f64>; 2] = [None, None];

    for &bias in biases {
        let bare1 = f01(&pair.q1, pair.t1.phi(bias));
        let bare2 = f01(&pair.q2, pair.t2.phi(bias));
        let (bare1, bare2) = match (bare1, bare2) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                if a.is_err() {
                    dropped.push(DroppedPoint { bias, qubit: 0 });
                }
                if b.is_err() {
                    dropped.push(DroppedPoint { bias, qubit: 1 });
                }
                continue;
            }
        };
        let (upper, lower, _) = coupled_spectrum(bare1, bare2, pair.g);
        // Reference points: continue from the previous assignment when
        // present, otherwise from the bare frequencies.
        let target1 = prev[0].unwrap_or(bare1);
        let target2 = prev[1].unwrap_or(bare2);
        // Qubit 0 takes the upper branch iff that minimizes the total jump.
        let cost_upper_first = (upper - target1).abs() + (lower - target2).abs();
        let cost_lower_first = (lower - target1).abs() + (upper - target2).abs();
        let (f_q1, br_q1, f_q2, br_q2) = if cost_upper_first <= cost_lower_first {
            (upper, Branch::Upper, lower, Branch::Lower)
        } else {
            (lower, Branch::Lower, upper, Branch::Upper)
        };
        table.records.push(FluxMapRecord { bias, qubit: 0, branch: br_q1, frequency: f_q1 });
        table.records.push(FluxMapRecord { bias, qubit: 1, branch: br_q2, frequency: f_q2 });
        prev = [Some(f_q1), Some(f_q2)];
    }
    Ok((table, dropped))
}

/// Converts an axial field threading a SQUID loop to reduced flux:
/// Phi/Phi0 = B * A / Phi0.
pub fn flux_from_field(b_axial: f64, loop_area: f64) -> Result<f64, DeviceError> {
    if !(loop_area > 0.0) {
        return Err(DeviceError::InvalidSpec(format!(
            "loop area must be > 0, got {loop_area}"
        )));
    }
    Ok(b_axial * loop_area / PHI_0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn paper_qubit() -> TransmonSpec {
        TransmonSpec::new(6.6e9, 295e6, 0.31).unwrap()
    }

    #[test]
    fn ej_endpoints_and_quarter_flux() {
        let q = paper_qubit();
        let ejs = q.e_j_sum();
        // E_Jsum = (6.6 + 0.295)^2 / (8 * 0.295) GHz = 20.144 GHz.
        assert_relative_eq!(ejs, 20.144_448_6e9, max_relative = 1e-8);
        assert_relative_eq!(ej_of_flux(&q, 0.0), ejs, max_relative = 1e-15);
        assert_relative_eq!(ej_of_flux(&q, 0.5), 0.31 * ejs, max_relative = 1e-12);
        // Closed form at quarter flux: sqrt(1/2) * sqrt(1 + d^2) * E_Jsum.
        let expected = ejs * (0.5f64).sqrt() * (1.0 + 0.31f64 * 0.31).sqrt();
        assert_relative_eq!(ej_of_flux(&q, 0.25), expected, max_relative = 1e-12);
        assert_relative_eq!(expected / ejs, 0.740_32, max_relative = 1e-4);
    }

    #[test]
    fn f01_paper_values() {
        let q = paper_qubit();
        assert_relative_eq!(f01(&q, 0.0).unwrap(), 6.6e9, max_relative = 1e-12);
        // Half flux: E_J = d E_Jsum; direct evaluation of the closed form.
        let expected_half = (8.0 * 0.31 * q.e_j_sum() * q.e_c).sqrt() - q.e_c;
        let got = f01(&q, 0.5).unwrap();
        assert_relative_eq!(got, expected_half, max_relative = 1e-12);
        assert!((got - 3.544e9).abs() < 1e7, "f01(0.5) = {got:e}");
        // Tunability exceeds 3 GHz.
        assert!(6.6e9 - got > 3.0e9);
        // Quarter flux.
        let expected_quarter = (8.0 * ej_of_flux(&q, 0.25) * q.e_c).sqrt() - q.e_c;
        assert_relative_eq!(f01(&q, 0.25).unwrap(), expected_quarter, max_relative = 1e-12);
        assert!((expected_quarter - 5.64e9).abs() < 1e7);
    }

    #[test]
    fn regime_error_when_ej_below_ec() {
        // Tiny d and large e_c push E_J(0.5) under E_C.
        let q = TransmonSpec::new(2.0e9, 400e6, 0.01).unwrap();
        assert!(matches!(f01(&q, 0.5), Err(DeviceError::Regime { .. })));
    }

    #[test]
    fn coupled_spectrum_splitting() {
        let (up, lo, two) = coupled_spectrum(6.0e9, 6.0e9, 5e6);
        assert_relative_eq!(up - lo, 10e6, max_relative = 1e-12);
        assert_relative_eq!(two, 6.0e9, max_relative = 1e-15);
        // g = 0 reduces to the bare pair.
        let (up0, lo0, mean0) = coupled_spectrum(6.6e9, 6.2e9, 0.0);
        assert_eq!(up0, 6.6e9);
        assert_eq!(lo0, 6.2e9);
        assert_eq!(mean0, 6.4e9);
        // Far detuned: lower branch depressed by ~g^2/Delta.
        let (_, lo_det, _) = coupled_spectrum(6.6e9, 6.2e9, 5e6);
        let shift = 6.2e9 - lo_det;
        let perturbative = (5e6f64).powi(2) / 0.4e9;
        assert!((shift - perturbative).abs() < 0.01 * perturbative, "shift {shift}");
    }

    #[test]
    fn coupled_spectrum_matches_brute_force_eigensolve() {
        // Characteristic-polynomial route: lambda = (tr +- sqrt(tr^2-4det))/2.
        for (f1, f2, g) in [
            (6.6e9, 6.2e9, 5e6),
            (6.0e9, 6.0e9, 5e6),
            (4.5e9, 6.3e9, 12e6),
            (5.0e9, 5.000001e9, 1e3),
        ] {
            let (up, lo, _) = coupled_spectrum(f1, f2, g);
            let tr = f1 + f2;
            let det = f1 * f2 - g * g;
            let disc = (tr * tr - 4.0 * det).sqrt();
            assert_relative_eq!(up, 0.5 * (tr + disc), max_relative = 1e-12);
            assert_relative_eq!(lo, 0.5 * (tr - disc), max_relative = 1e-12);
        }
    }

    #[test]
    fn synth_fluxmap_center_qubit_traverses_five_periods() {
        let pair = CoupledPairSpec {
            q1: paper_qubit(),
            q2: TransmonSpec::new(6.2e9, 295e6, 0.31).unwrap(),
            t1: FluxTransfer { k: 1.0, offset: 0.0 },
            t2: FluxTransfer { k: 0.2, offset: 0.0 },
            g: 5e6,
        };
        let biases: Vec<f64> = (0..=500).map(|i| i as f64 * 0.01).collect(); // 0..5
        let (table, dropped) = synth_fluxmap(&pair, &biases).unwrap();
        assert!(dropped.is_empty());
        // Qubit 0 sweeps phi over [0, 5]: six sweet spots visited while the
        // side qubit completes a single period.
        let q0: Vec<f64> = table
            .records
            .iter()
            .filter(|r| r.qubit == 0)
            .map(|r| r.frequency)
            .collect();
        let near_max = q0.iter().filter(|&&f| f > 6.59e9).count();
        assert!(near_max >= 6, "near-max samples {near_max}");
        // Qubit 1 spans one period: its minimum sits near f01(0.5).
        let q1_min = table
            .records
            .iter()
            .filter(|r| r.qubit == 1)
            .map(|r| r.frequency)
            .fold(f64::INFINITY, f64::min);
        let bottom = f01(&pair.q2, 0.5).unwrap();
        assert!((q1_min - bottom).abs() < 50e6, "q1 min {q1_min:e} vs {bottom:e}");
    }

    #[test]
    fn synth_fluxmap_empty_and_min_gap() {
        let pair = CoupledPairSpec {
            q1: paper_qubit(),
            q2: TransmonSpec::new(6.2e9, 295e6, 0.31).unwrap(),
            t1: FluxTransfer { k: 1.0, offset: 0.0 },
            t2: FluxTransfer { k: 0.2, offset: 0.0 },
            g: 5e6,
        };
        let (table, _) = synth_fluxmap(&pair, &[]).unwrap();
        assert!(table.records.is_empty());

        // Dense scan across a crossing: the minimum branch gap equals 2g.
        let biases: Vec<f64> = (0..4000).map(|i| 0.05 + i as f64 * 1e-5).collect();
        let (table, _) = synth_fluxmap(&pair, &biases).unwrap();
        let mut min_gap = f64::INFINITY;
        for chunk in table.records.chunks(2) {
            if let [a, b] = chunk {
                min_gap = min_gap.min((a.frequency - b.frequency).abs());
            }
        }
        assert!(
            (min_gap - 10e6).abs() < 0.05e6,
            "min gap {min_gap:e} expected ~10 MHz"
        );
    }

    #[test]
    fn fluxmap_csv_round_trip() {
        let pair = CoupledPairSpec {
            q1: paper_qubit(),
            q2: TransmonSpec::new(6.2e9, 295e6, 0.31).unwrap(),
            t1: FluxTransfer { k: 1.0, offset: 0.0 },
            t2: FluxTransfer { k: 0.2, offset: 0.0 },
            g: 5e6,
        };
        let biases: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
        let (table, _) = synth_fluxmap(&pair, &biases).unwrap();
        let text = table.to_csv();
        let back = FluxMapTable::from_csv(&text).unwrap();
        assert_eq!(table, back);
        assert!(FluxMapTable::from_csv("1.0,0,sideways,6e9").is_err());
    }

    #[test]
    fn flux_from_field_arithmetic() {
        // 3.55 nT over a 200 x 200 um^2 loop.
        let phi = flux_from_field(3.55e-9, 200e-6 * 200e-6).unwrap();
        assert_relative_eq!(phi, 6.868e-2, max_relative = 1e-3);
        assert_eq!(flux_from_field(0.0, 4e-8).unwrap(), 0.0);
        // Inversion: the field that threads exactly one flux quantum.
        let b_one = PHI_0 / (200e-6 * 200e-6);
        assert_relative_eq!(b_one, 5.169_6e-8, max_relative = 1e-4);
        assert_relative_eq!(
            flux_from_field(b_one, 200e-6 * 200e-6).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert!(flux_from_field(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn f01_even_and_periodic(
            f_max in 4.0e9f64..8.0e9,
            e_c in 0.15e9f64..0.4e9,
            d in 0.05f64..0.95,
            phi in -3.0f64..3.0,
        ) {
            let q = TransmonSpec { f_max, e_c, d };
            prop_assume!(q.validate().is_ok());
            prop_assume!(f01(&q, 0.5).is_ok());
            let f = f01(&q, phi).unwrap();
            let f_neg = f01(&q, -phi).unwrap();
            let f_shift = f01(&q, phi + 1.0).unwrap();
            prop_assert!((f - f_neg).abs() <= 1e-9 * f);
            prop_assert!((f - f_shift).abs() <= 1e-6 * f);
        }

        #[test]
        fn symmetric_squid_reduces_to_cosine(phi in -2.0f64..2.0) {
            let q = TransmonSpec { f_max: 6.0e9, e_c: 0.3e9, d: 0.0 };
            let expected = q.e_j_sum() * (std::f64::consts::PI * phi).cos().abs();
            prop_assert!((ej_of_flux(&q, phi) - expected).abs() <= 1e-9 * q.e_j_sum());
        }

        #[test]
        fn f01_minimum_sits_at_half_flux(
            d in 0.05f64..0.95,
            e_c in 0.2e9f64..0.35e9,
        ) {
            let q = TransmonSpec { f_max: 6.6e9, e_c, d };
            prop_assume!(q.validate().is_ok());
            prop_assume!(f01(&q, 0.5).is_ok());
            let bottom = f01(&q, 0.5).unwrap();
            for k in 0..100 {
                let phi = -0.5 + k as f64 / 99.0 * 2.0; // [-0.5, 1.5]
                let f = f01(&q, phi).unwrap();
                prop_assert!(f >= bottom - 1e-6 * bottom);
            }
        }

        #[test]
        fn coupled_gap_at_least_two_g(
            f1 in 5.0e9f64..7.0e9,
            f2 in 5.0e9f64..7.0e9,
            g in 0.0f64..50e6,
        ) {
            let (up, lo, _) = coupled_spectrum(f1, f2, g);
            prop_assert!(up - lo >= 2.0 * g - 1e-3);
            if f1 == f2 {
                prop_assert!((up - lo - 2.0 * g).abs() <= 1e-9 * (g + 1.0));
            }
        }
    }
}
