//! Desk-scale simulator for magnetic-hose flux control of 3D transmon qubits.
//!
//! The library covers the full chain from a biased coil to a settled qubit
//! frequency:
//!
//! * [`geometry`] — materials, axisymmetric regions, the reference hose/coil/
//!   cavity configuration, and rasterization onto a solver grid.
//! * [`magnetostatics`] — finite-difference solve of the azimuthal
//!   vector-potential problem, field probing, flux integrals, energy and
//!   inductance, saturation diagnostics.
//! * [`device`] — asymmetric-SQUID transmon physics: Josephson energy vs
//!   flux, transition frequencies, avoided crossings, flux-map synthesis and
//!   damped least-squares fitting.
//! * [`pulse`] — flux-line dynamics: waveform construction, first-order plant
//!   response, exact and constrained pre-distortion, regularized
//!   deconvolution, settling metrics, and simulated time-frequency traces.
//! * [`rfguard`] — closed-form microwave-filter estimates: quarter-wave
//!   resonance and below-cutoff waveguide attenuation.
//! * [`cli`] — command orchestration shared by the `fluxhose` binary:
//!   reproducible runs from JSON configs with CSV/JSON outputs.
//!
//! All quantities are SI unless noted otherwise; flux is expressed in units
//! of the flux quantum where the transmon physics wants it.

pub mod cli;
pub mod constants;
pub mod device;
pub mod geometry;
pub mod magnetostatics;
pub mod pulse;
pub mod rfguard;
pub mod rng;
