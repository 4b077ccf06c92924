//! Flux-line dynamics and pulse shaping.
//!
//! The line between the arbitrary-waveform source and the flux at the qubit
//! behaves as a linear plant; the measured step response is first order
//! with tau ~ 2 us. This module builds drive waveforms, simulates the plant
//! with an exponential integrator (exact for stepwise-constant inputs),
//! inverts it exactly or under an amplitude cap, performs difference-
//! regularized deconvolution, measures settling, and composes the whole
//! chain into a qubit-frequency trace.
//!
//! All operations are pure and deterministic; waveforms are uniformly
//! sampled with dt in seconds.

use serde::{Deserialize, Serialize};

use crate::device::{DeviceError, FluxTransfer, TransmonSpec};

/// Uniformly sampled time series. Sample values are dimensionless bias
/// units for drive waveforms; derived traces reuse the container with the
/// unit stated at the producing operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    /// Sample period [s].
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self, PulseError> {
        if !(dt > 0.0) {
            return Err(PulseError::Shape(format!("dt must be > 0, got {dt}")));
        }
        if samples.len() < 2 {
            return Err(PulseError::Shape(format!(
                "waveform needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(PulseError::Shape("waveform samples must be finite".into()));
        }
        Ok(Self { dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    /// Sample time for index n.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Linear plant between commanded bias and flux at the qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum PlantModel {
    /// Single-pole response with the given time constant [s].
    FirstOrder { tau: f64 },
    /// Explicit impulse response; samples must share the input's dt and
    /// should carry unit DC gain for a flux line.
    ImpulseResponse(Waveform),
}

impl PlantModel {
    pub fn validate(&self) -> Result<(), PulseError> {
        match self {
            PlantModel::FirstOrder { tau } => {
                if !(*tau > 0.0) {
                    return Err(PulseError::Shape(format!("tau must be > 0, got {tau}")));
                }
            }
            PlantModel::ImpulseResponse(h) => {
                if h.samples.iter().any(|s| !s.is_finite()) {
                    return Err(PulseError::Shape("impulse response must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Limits for constrained pre-distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredistortionConstraints {
    /// Largest admissible |input| as a multiple of the target step.
    pub amplitude_cap: f64,
    /// Settling band as a fraction of the step.
    pub settle_band: f64,
    /// Required settling time [s]; `None` leaves it unconstrained.
    pub max_settle: Option<f64>,
}

impl PredistortionConstraints {
    pub fn validate(&self) -> Result<(), PulseError> {
        if !(self.amplitude_cap >= 1.0) {
            return Err(PulseError::Shape(format!(
                "amplitude cap must be >= 1, got {}",
                self.amplitude_cap
            )));
        }
        if !(self.settle_band > 0.0 && self.settle_band < 1.0) {
            return Err(PulseError::Shape(format!(
                "settle band must be in (0, 1), got {}",
                self.settle_band
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PulseError {
    #[error("waveform shape error: {0}")]
    Shape(String),
    #[error("sample periods differ: {0}")]
    DtMismatch(String),
    #[error(
        "requested settling {requested:.3e} s is unattainable under the amplitude cap; minimum attainable is {attainable:.3e} s"
    )]
    Infeasible { requested: f64, attainable: f64 },
    #[error("system is singular at lambda = 0 ({0}); use lambda > 0")]
    Conditioning(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Square pulse with sine-shaped edges: rises over [t_start, t_start+edge]
/// as amplitude * sin(pi/2 * t/edge), holds flat, falls mirrored into
/// t_stop. Sampled on [0, t_stop].
pub fn square_smoothed(
    amplitude: f64,
    t_start: f64,
    t_stop: f64,
    edge: f64,
    dt: f64,
) -> Result<Waveform, PulseError> {
    if !(dt > 0.0) {
        return Err(PulseError::Shape(format!("dt must be > 0, got {dt}")));
    }
    if edge < dt {
        return Err(PulseError::Shape(format!(
            "edge {edge} must be at least one sample period {dt}"
        )));
    }
    if t_start < 0.0 || t_stop - t_start < 2.0 * edge {
        return Err(PulseError::Shape(format!(
            "pulse window [{t_start}, {t_stop}] cannot hold two {edge} edges"
        )));
    }
    let n = (t_stop / dt).round() as usize + 1;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let samples = (0..n.max(2))
        .map(|i| {
            let t = i as f64 * dt;
            if t < t_start || t > t_stop {
                0.0
            } else if t < t_start + edge {
                amplitude * (half_pi * (t - t_start) / edge).sin()
            } else if t <= t_stop - edge {
                amplitude
            } else {
                amplitude * (half_pi * (t_stop - t) / edge).sin()
            }
        })
        .collect();
    Waveform::new(dt, samples)
}

/// Runs the plant over an input waveform. The first-order kind starts from
/// rest and uses the exponential-integrator update
/// y[n+1] = u[n+1] + (y[n] - u[n+1]) exp(-dt/tau), exact for inputs held
/// constant over each sample interval. The impulse-response kind is a
/// direct causal convolution and requires matching dt.
pub fn plant_response(plant: &PlantModel, input: &Waveform) -> Result<Waveform, PulseError> {
    plant.validate()?;
    match plant {
        PlantModel::FirstOrder { tau } => {
            let q = (-input.dt / tau).exp();
            let mut y = Vec::with_capacity(input.len());
            y.push(0.0);
            for n in 1..input.len() {
                let u = input.samples[n];
                let prev = y[n - 1];
                y.push(u + (prev - u) * q);
            }
            Waveform::new(input.dt, y)
        }
        PlantModel::ImpulseResponse(h) => {
            if (h.dt - input.dt).abs() > 1e-15 * input.dt.max(h.dt) {
                return Err(PulseError::DtMismatch(format!(
                    "impulse response dt {} vs input dt {}",
                    h.dt, input.dt
                )));
            }
            let n = input.len();
            let m = h.len();
            let mut y = vec![0.0; n];
            for (k, &hk) in h.samples.iter().enumerate().take(m) {
                if hk == 0.0 {
                    continue;
                }
                for i in k..n {
                    y[i] += hk * input.samples[i - k];
                }
            }
            Waveform::new(input.dt, y)
        }
    }
}

/// Exact continuous-time inverse of a first-order plant sampled on the
/// target grid: u = y + tau dy/dt with central differences inside and
/// one-sided differences at the ends.
pub fn exact_inverse_first_order(tau: f64, target: &Waveform) -> Result<Waveform, PulseError> {
    if !(tau > 0.0) {
        return Err(PulseError::Shape(format!("tau must be > 0, got {tau}")));
    }
    let y = &target.samples;
    let n = y.len();
    let dt = target.dt;
    let mut u = Vec::with_capacity(n);
    u.push(y[0] + tau * (y[1] - y[0]) / dt);
    for i in 1..n - 1 {
        u.push(y[i] + tau * (y[i + 1] - y[i - 1]) / (2.0 * dt));
    }
    u.push(y[n - 1] + tau * (y[n - 1] - y[n - 2]) / dt);
    Waveform::new(dt, u)
}

/// Fastest cap-respecting pre-distortion for a step: targets the
/// exponential approach with tau_fast = tau / cap, at which the required
/// initial overshoot saturates the cap exactly, and reports the time to
/// enter the settling band, tau_fast * ln(1/band).
pub fn constrained_predistort(
    tau: f64,
    step_amplitude: f64,
    constraints: &PredistortionConstraints,
    dt: f64,
) -> Result<(Waveform, f64), PulseError> {
    constraints.validate()?;
    if !(tau > 0.0) {
        return Err(PulseError::Shape(format!("tau must be > 0, got {tau}")));
    }
    if !(dt > 0.0) {
        return Err(PulseError::Shape(format!("dt must be > 0, got {dt}")));
    }
    let tau_fast = tau / constraints.amplitude_cap;
    let settle = tau_fast * (1.0 / constraints.settle_band).ln();
    if let Some(max_settle) = constraints.max_settle {
        if settle > max_settle {
            return Err(PulseError::Infeasible { requested: max_settle, attainable: settle });
        }
    }
    // Long enough for the forward check to watch the band entry and tail.
    let duration = (30.0 * tau_fast).max(5.0 * settle);
    let n = (duration / dt).ceil() as usize + 1;
    let target: Vec<f64> = (0..n.max(2))
        .map(|i| step_amplitude * (1.0 - (-(i as f64) * dt / tau_fast).exp()))
        .collect();
    let target = Waveform::new(dt, target)?;
    let input = exact_inverse_first_order(tau, &target)?;
    Ok((input, settle))
}

/// Symmetric positive definite banded matrix in lower-band storage:
/// `bands[d][i] = A[i + d][i]`.
struct BandedSpd {
    n: usize,
    bands: Vec<Vec<f64>>,
}

impl BandedSpd {
    fn new(n: usize, bandwidth: usize) -> Self {
        Self { n, bands: (0..=bandwidth).map(|_| vec![0.0; n]).collect() }
    }

    fn add(&mut self, row: usize, col: usize, value: f64) {
        let (hi, lo) = if row >= col { (row, col) } else { (col, row) };
        self.bands[hi - lo][lo] += value;
    }

    /// In-place banded Cholesky followed by the two substitutions; errors
    /// with the failing pivot index.
    fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>, usize> {
        let bw = self.bands.len() - 1;
        let n = self.n;
        for j in 0..n {
            let mut diag = self.bands[0][j];
            for k in 1..=bw.min(j) {
                let l = self.bands[k][j - k];
                diag -= l * l;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(j);
            }
            let diag = diag.sqrt();
            self.bands[0][j] = diag;
            for d in 1..=bw {
                if j + d >= n {
                    break;
                }
                let mut v = self.bands[d][j];
                // sum over shared predecessors of rows j+d and j
                for k in 1..=bw {
                    if k > j || d + k > bw {
                        break;
                    }
                    v -= self.bands[d + k][j - k] * self.bands[k][j - k];
                }
                self.bands[d][j] = v / diag;
            }
        }
        // L y = rhs
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = rhs[i];
            for d in 1..=bw.min(i) {
                sum -= self.bands[d][i - d] * y[i - d];
            }
            y[i] = sum / self.bands[0][i];
        }
        // L^T x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for d in 1..=bw {
                if i + d >= n {
                    break;
                }
                sum -= self.bands[d][i] * x[i + d];
            }
            x[i] = sum / self.bands[0][i];
        }
        Ok(x)
    }
}

/// Deconvolution with a first-difference penalty: minimizes
/// |H u - target|^2 + lambda |D u|^2 and solves the normal equations with a
/// direct banded factorization. The first-order plant inverts analytically
/// (its discrete inverse is two-tap), so its normal system is solved in the
/// output variable and mapped back; general impulse responses assemble the
/// banded normal matrix directly. lambda = 0 is allowed while the system is
/// well conditioned.
pub fn deconvolve(
    plant: &PlantModel,
    target: &Waveform,
    lambda: f64,
) -> Result<Waveform, PulseError> {
    plant.validate()?;
    if lambda < 0.0 {
        return Err(PulseError::Domain(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = target.len();
    match plant {
        PlantModel::FirstOrder { tau } => {
            let q = (-target.dt / tau).exp();
            let gain = 1.0 - q;
            // Substitute v = H u (v is the plant output); u = B v with the
            // two-tap inverse u[i] = (v[i] - q v[i-1]) / (1 - q). Then
            // |v - y|^2 + lambda |D B v|^2 stays SPD for every lambda >= 0,
            // with (D B v)[m] = (v[m+1] - (1+q) v[m] + q v[m-1]) / (1 - q).
            let mut normal = BandedSpd::new(n, 2);
            for i in 0..n {
                normal.add(i, i, 1.0);
            }
            if lambda > 0.0 {
                let w = lambda / (gain * gain);
                // Rows m = 0..n-1 of D B: coefficients on v[m-1], v[m], v[m+1].
                for m in 0..n - 1 {
                    let mut idx = [0usize; 3];
                    let mut coef = [0f64; 3];
                    let mut cnt = 0;
                    if m >= 1 {
                        idx[cnt] = m - 1;
                        coef[cnt] = q;
                        cnt += 1;
                    }
                    idx[cnt] = m;
                    coef[cnt] = -(1.0 + q);
                    cnt += 1;
                    idx[cnt] = m + 1;
                    coef[cnt] = 1.0;
                    cnt += 1;
                    for a in 0..cnt {
                        for b in 0..cnt {
                            if idx[a] >= idx[b] {
                                normal.add(idx[a], idx[b], w * coef[a] * coef[b]);
                            }
                        }
                    }
                }
            }
            let v = normal
                .solve(&target.samples)
                .map_err(|pivot| PulseError::Conditioning(format!("pivot {pivot}")))?;
            let mut u = Vec::with_capacity(n);
            u.push(v[0] / gain);
            for i in 1..n {
                u.push((v[i] - q * v[i - 1]) / gain);
            }
            Waveform::new(target.dt, u)
        }
        PlantModel::ImpulseResponse(h) => {
            if (h.dt - target.dt).abs() > 1e-15 * target.dt.max(h.dt) {
                return Err(PulseError::DtMismatch(format!(
                    "impulse response dt {} vs target dt {}",
                    h.dt, target.dt
                )));
            }
            let m = h.len().min(n);
            let hh = &h.samples;
            // Normal matrix H^T H (bandwidth m-1) + lambda D^T D.
            let bw = (m - 1).max(1).min(n - 1);
            let mut normal = BandedSpd::new(n, bw);
            for i in 0..n {
                for j in i..(i + m).min(n) {
                    // (H^T H)[j][i] = sum_t h[t - j] h[t - i]
                    let mut sum = 0.0;
                    for t in j..(i + m).min(n) {
                        sum += hh[t - j] * hh[t - i];
                    }
                    if sum != 0.0 {
                        normal.add(j, i, sum);
                    }
                }
            }
            if lambda > 0.0 {
                for i in 0..n {
                    let mut diag = 0.0;
                    if i > 0 {
                        diag += 1.0;
                    }
                    if i + 1 < n {
                        diag += 1.0;
                    }
                    normal.add(i, i, lambda * diag);
                    if i + 1 < n {
                        normal.add(i + 1, i, -lambda);
                    }
                }
            }
            // Right-hand side H^T y.
            let mut rhs = vec![0.0; n];
            for (i, r) in rhs.iter_mut().enumerate() {
                let mut sum = 0.0;
                for t in i..(i + m).min(n) {
                    sum += hh[t - i] * target.samples[t];
                }
                *sum_slot(r) += sum;
            }
            let u = normal.solve(&rhs).map_err(|pivot| {
                PulseError::Conditioning(format!("pivot {pivot}"))
            })?;
            Waveform::new(target.dt, u)
        }
    }
}

#[inline]
fn sum_slot(r: &mut f64) -> &mut f64 {
    r
}

/// Time after which the trace stays inside
/// [final (1 - band), final (1 + band)], measured from the waveform start;
/// 0 when it never leaves the band.
pub fn settling_time(output: &Waveform, final_value: f64, band: f64) -> Result<f64, PulseError> {
    if !(band > 0.0) {
        return Err(PulseError::Domain(format!("band must be > 0, got {band}")));
    }
    if final_value == 0.0 {
        return Err(PulseError::Domain(
            "relative band around zero final value; use an absolute reference".into(),
        ));
    }
    let lo = final_value * (1.0 - band);
    let hi = final_value * (1.0 + band);
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let mut last_outside = None;
    for (i, &y) in output.samples.iter().enumerate() {
        if y < lo || y > hi {
            last_outside = Some(i);
        }
    }
    Ok(match last_outside {
        None => 0.0,
        Some(i) => output.time(i + 1),
    })
}

/// Drives the full chain bias -> plant -> flux -> f01 and optionally blurs
/// the frequency trace with a Gaussian of the given sigma [s] to emulate
/// the spectroscopic resolution. Returns the f01 time series [Hz].
pub fn frequency_trace(
    spec: &TransmonSpec,
    transfer: &FluxTransfer,
    flux_input: &Waveform,
    plant: &PlantModel,
    blur_sigma: f64,
) -> Result<Waveform, PulseError> {
    spec.validate()?;
    transfer.validate()?;
    if blur_sigma < 0.0 {
        return Err(PulseError::Domain(format!(
            "blur sigma must be >= 0, got {blur_sigma}"
        )));
    }
    let response = plant_response(plant, flux_input)?;
    let mut trace = Vec::with_capacity(response.len());
    for &bias in &response.samples {
        trace.push(crate::device::f01(spec, transfer.phi(bias))?);
    }
    if blur_sigma > 0.0 {
        trace = gaussian_blur(&trace, blur_sigma / flux_input.dt);
    }
    Waveform::new(flux_input.dt, trace)
}

/// Gaussian smoothing with kernel renormalization at the edges.
fn gaussian_blur(samples: &[f64], sigma_samples: f64) -> Vec<f64> {
    if sigma_samples <= 0.0 {
        return samples.to_vec();
    }
    let radius = (4.0 * sigma_samples).ceil() as usize;
    let kernel: Vec<f64> = (0..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma_samples).powi(2)).exp())
        .collect();
    let n = samples.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = kernel[0] * samples[i];
        let mut weight = kernel[0];
        for k in 1..=radius {
            if i >= k {
                acc += kernel[k] * samples[i - k];
                weight += kernel[k];
            }
            if i + k < n {
                acc += kernel[k] * samples[i + k];
                weight += kernel[k];
            }
        }
        out.push(acc / weight);
    }
    out
}
