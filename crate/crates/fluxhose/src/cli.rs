//! Command orchestration for the `fluxhose` binary.
//!
//! Every command resolves a config (file and/or flags), runs the physics,
//! and writes CSV/JSON artifacts plus a `manifest.json` recording the
//! config hash, crate version, seed and wall time. Identical configs and
//! seeds produce byte-identical result files; the manifest is run metadata
//! (it carries the wall time) and is excluded from that contract.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 configuration error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::{
    self, fit_fluxmap, CoupledPairSpec, DeviceError, FitOptions, FluxMapTable, FluxTransfer,
    TransmonSpec,
};
use crate::geometry::{
    build_paper_scene, rasterize, GeometryError, GridSpec, Scene, SceneOverrides,
};
use crate::magnetostatics::{
    self, flux_through_disk, probe, solve, SolveError, SolverMethod, SolverOptions,
};
use crate::pulse::{
    constrained_predistort, deconvolve, frequency_trace, plant_response, settling_time,
    square_smoothed, PlantModel, PredistortionConstraints, PulseError, Waveform,
};
use crate::rfguard::{cutoff_and_attenuation, quarter_wave, RfError, WaveguideSpec};
use crate::rng::{SplitMix64, ALGORITHM_ID};

/// Full double precision (17 significant digits), locale-free.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Rf(#[from] RfError),
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 1 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Geometry(_) => 2,
            CliError::Rf(_) => 2,
            CliError::Solve(SolveError::NonConvergence { .. }) => 1,
            CliError::Solve(_) => 2,
            CliError::Device(DeviceError::Degenerate { .. })
            | CliError::Device(DeviceError::NoConvergence(_)) => 1,
            CliError::Device(_) => 2,
            CliError::Pulse(PulseError::Infeasible { .. })
            | CliError::Pulse(PulseError::Conditioning(_)) => 1,
            CliError::Pulse(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "numerical",
            _ => "configuration",
        }
    }

    /// Machine-readable error document for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "message": self.to_string() }
        })
        .to_string()
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_owned(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rng: Option<&'a str>,
    wall_time_s: f64,
    outputs: Vec<String>,
}

fn config_hash<T: Serialize>(config: &T) -> String {
    let canonical = serde_json::to_string(config).expect("serializable config");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest<T: Serialize>(
    out_dir: &Path,
    command: &str,
    config: &T,
    seed: Option<u64>,
    started: std::time::Instant,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config_hash(config),
        seed,
        rng: seed.map(|_| ALGORITHM_ID),
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    write_file(&out_dir.join("manifest.json"), &to_pretty_json(&manifest))
}

// ---------------------------------------------------------------------------
// scene
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// `paper` or `vacuum` (paper coil in empty space).
    pub preset: String,
    pub overrides: SceneOverrides,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { preset: "paper".into(), overrides: SceneOverrides::default() }
    }
}

pub fn run_scene(config: &SceneConfig, out_path: &Path) -> Result<(), CliError> {
    let scene = match config.preset.as_str() {
        "paper" => build_paper_scene(&config.overrides)?,
        "vacuum" => {
            let mut scene = build_paper_scene(&SceneOverrides {
                layers: Some(vec![]),
                ..config.overrides.clone()
            })?;
            scene.regions.clear();
            scene.wall.material = "vacuum".into();
            scene
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown scene preset `{other}` (expected `paper` or `vacuum`)"
            )))
        }
    };
    let mut text = scene.to_json();
    text.push('\n');
    write_file(out_path, &text)
}

// ---------------------------------------------------------------------------
// field
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub scene: PathBuf,
    pub spacing: f64,
    /// Coil current override [A]; `None` keeps the scene's value.
    pub current: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: Option<usize>,
    pub method: SolverMethod,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            scene: PathBuf::from("scene.json"),
            spacing: 50e-6,
            current: None,
            // Attainable with the 1e-4..1e4 material contrast.
            tolerance: 1e-7,
            max_iterations: None,
            method: SolverMethod::ConjugateGradient,
        }
    }
}

#[derive(Debug, Serialize)]
struct ProbeReport {
    r: f64,
    z: f64,
    b_r: f64,
    b_z: f64,
}

#[derive(Debug, Serialize)]
struct FieldSummary {
    residual: f64,
    iterations: usize,
    grid_nr: usize,
    grid_nz: usize,
    spacing: f64,
    ampere_turns: f64,
    probes: Vec<ProbeReport>,
    /// Net flux through the wall hole at mid-wall height [Wb].
    hole_flux_wb: f64,
    /// Flux carried by the hose core at the same height [Wb].
    core_flux_wb: f64,
    hole_to_core_ratio: f64,
    inductance_h: Option<f64>,
    saturation: Vec<magnetostatics::SaturationEntry>,
}

pub fn run_field(config: &FieldConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let mut scene = Scene::from_json(&read_file(&config.scene)?)?;
    if let Some(current) = config.current {
        scene.coil.current = current;
    }
    let grid = GridSpec::from_domain(&scene.domain, config.spacing)?;
    let mg = rasterize(&scene, &grid)?;
    let opts = SolverOptions {
        tolerance: config.tolerance,
        max_iterations: config.max_iterations,
        method: config.method,
        ..Default::default()
    };
    let field = solve(&mg, &opts)?;

    // field.csv: row-major over nodes, r varying slowest.
    let mut csv = String::from("r,z,b_r,b_z\n");
    for i in 0..=grid.nr {
        for j in 0..=grid.nz {
            let (r, z) = grid.node(i, j);
            let n = i * (grid.nz + 1) + j;
            csv.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(r),
                fmt_f64(z),
                fmt_f64(field.b_r[n]),
                fmt_f64(field.b_z[n])
            ));
        }
    }
    write_file(&out_dir.join("field.csv"), &csv)?;

    let mut probes = Vec::new();
    for &(r, z) in &scene.probes {
        let (b_r, b_z) = probe(&field, (r, z))?;
        probes.push(ProbeReport { r, z, b_r, b_z });
    }
    let hole_radius = scene.wall.shape.r_in();
    let wall_mid_z = 0.5 * (scene.wall.shape.z_min() + scene.wall.shape.z_max());
    let hole_flux = flux_through_disk(&field, hole_radius, wall_mid_z)?;
    let core_radius = scene
        .regions
        .iter()
        .map(|r| r.shape.r_out())
        .fold(f64::INFINITY, f64::min);
    let core_flux = if core_radius.is_finite() {
        flux_through_disk(&field, core_radius, wall_mid_z)?
    } else {
        0.0
    };
    let inductance = if scene.coil.current != 0.0 {
        Some(magnetostatics::inductance(&field, &mg, scene.coil.current)?)
    } else {
        None
    };
    let summary = FieldSummary {
        residual: field.residual_norm,
        iterations: field.iterations,
        grid_nr: grid.nr,
        grid_nz: grid.nz,
        spacing: grid.spacing,
        ampere_turns: mg.total_ampere_turns(),
        probes,
        hole_flux_wb: hole_flux,
        core_flux_wb: core_flux,
        hole_to_core_ratio: if core_flux != 0.0 { hole_flux / core_flux } else { 0.0 },
        inductance_h: inductance,
        saturation: magnetostatics::saturation_report(&field, &scene),
    };
    write_file(&out_dir.join("summary.json"), &to_pretty_json(&summary))?;
    write_manifest(out_dir, "field", config, None, started, &["field.csv", "summary.json"])
}

// ---------------------------------------------------------------------------
// fluxmap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl BiasRange {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if self.points < 2 || !(self.stop > self.start) {
            return Err(CliError::Config(format!(
                "bias range needs stop > start and at least 2 points, got [{}, {}] x {}",
                self.start, self.stop, self.points
            )));
        }
        let n = self.points;
        Ok((0..n)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
            .collect())
    }
}

/// The measured pair: 6.6/6.2 GHz maxima, 295 MHz anharmonicity, d = 0.31,
/// five-fold transfer asymmetry, 5 MHz coupling.
pub fn paper_pair() -> CoupledPairSpec {
    CoupledPairSpec {
        q1: TransmonSpec { f_max: 6.6e9, e_c: 295e6, d: 0.31 },
        q2: TransmonSpec { f_max: 6.2e9, e_c: 295e6, d: 0.31 },
        t1: FluxTransfer { k: 1.0, offset: 0.0 },
        t2: FluxTransfer { k: 0.2, offset: 0.0 },
        g: 5e6,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxmapConfig {
    pub pair: CoupledPairSpec,
    pub bias: BiasRange,
    /// Gaussian frequency noise added to the synthesized map [Hz].
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    /// CSV table to fit instead of fitting the synthesized one.
    pub fit_input: Option<PathBuf>,
    /// Run the fit and write fit.json.
    pub fit: bool,
    /// Initial guess for the fit; defaults to `pair`.
    pub fit_init: Option<CoupledPairSpec>,
}

impl Default for FluxmapConfig {
    fn default() -> Self {
        Self {
            pair: paper_pair(),
            bias: BiasRange { start: -1.25, stop: 1.25, points: 251 },
            noise_sigma: None,
            seed: None,
            fit_input: None,
            fit: false,
            fit_init: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct FitJson {
    parameters: serde_json::Value,
    sigma: serde_json::Value,
    rms_residual_hz: f64,
    iterations: usize,
    converged: bool,
}

pub fn run_fluxmap(config: &FluxmapConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    if config.noise_sigma.is_some() && config.seed.is_none() {
        return Err(CliError::Config(
            "noise injection requires an explicit seed".into(),
        ));
    }
    let biases = config.bias.values()?;
    let (mut table, dropped) = device::synth_fluxmap(&config.pair, &biases)?;
    if let Some(sigma) = config.noise_sigma {
        let mut rng = SplitMix64::new(config.seed.unwrap());
        for record in &mut table.records {
            record.frequency += sigma * rng.next_gaussian();
        }
    }
    write_file(&out_dir.join("fluxmap.csv"), &table.to_csv())?;

    let mut outputs = vec!["fluxmap.csv"];
    if config.fit || config.fit_input.is_some() {
        let fit_table = match &config.fit_input {
            Some(path) => FluxMapTable::from_csv(&read_file(path)?)?,
            None => table,
        };
        let init = config.fit_init.unwrap_or(config.pair);
        let report = fit_fluxmap(&fit_table, &init, &FitOptions::default())?;
        let names = crate::device::PARAMETER_NAMES;
        let values = [
            report.pair.q1.f_max,
            report.pair.q1.d,
            report.pair.t1.k,
            report.pair.t1.offset,
            report.pair.q2.f_max,
            report.pair.q2.d,
            report.pair.t2.k,
            report.pair.t2.offset,
            report.pair.g,
        ];
        let parameters: serde_json::Map<String, serde_json::Value> = names
            .iter()
            .zip(values.iter())
            .map(|(n, v)| (n.to_string(), serde_json::json!(v)))
            .collect();
        let sigma: serde_json::Map<String, serde_json::Value> = names
            .iter()
            .zip(report.sigma.iter())
            .map(|(n, s)| (n.to_string(), serde_json::json!(s)))
            .collect();
        let fit_json = FitJson {
            parameters: parameters.into(),
            sigma: sigma.into(),
            rms_residual_hz: report.rms_residual,
            iterations: report.iterations,
            converged: report.converged,
        };
        write_file(&out_dir.join("fit.json"), &to_pretty_json(&fit_json))?;
        outputs.push("fit.json");
    }
    if !dropped.is_empty() {
        eprintln!(
            "{}",
            serde_json::json!({
                "warning": "dropped points outside the transmon regime",
                "count": dropped.len(),
            })
        );
    }
    write_manifest(out_dir, "fluxmap", config, config.seed, started, &outputs)
}

// ---------------------------------------------------------------------------
// pulse
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    Square,
    Predistort,
    Deconvolve,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    pub shape: PulseShape,
    /// Plant time constant [s].
    pub tau: f64,
    pub dt: f64,
    /// Square-pulse geometry [s].
    pub t_start: f64,
    pub t_stop: f64,
    pub edge: f64,
    /// Drive amplitude in bias units; when `detuning_hz` is set the
    /// amplitude is derived from the transmon instead.
    pub amplitude: f64,
    /// Steady-state detuning from f_max to target [Hz].
    pub detuning_hz: Option<f64>,
    /// Pre-distortion constraints.
    pub amplitude_cap: f64,
    pub settle_band: f64,
    pub max_settle: Option<f64>,
    /// Deconvolution regularization weight.
    pub lambda: f64,
    pub transmon: TransmonSpec,
    pub transfer: FluxTransfer,
    /// Spectroscopic blur applied to the frequency trace [s].
    pub blur_sigma: f64,
    /// Total simulated span [s].
    pub duration: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            shape: PulseShape::Square,
            tau: 2.0e-6,
            dt: 1.0e-9,
            t_start: 0.0,
            t_stop: 10.0e-6,
            edge: 20.0e-9,
            amplitude: 1.0,
            detuning_hz: None,
            amplitude_cap: 40.0,
            settle_band: 0.01,
            max_settle: None,
            lambda: 1e-6,
            transmon: TransmonSpec { f_max: 6.6e9, e_c: 295e6, d: 0.31 },
            transfer: FluxTransfer { k: 0.1, offset: 0.0 },
            blur_sigma: 0.0,
            duration: 20.0e-6,
        }
    }
}

/// Bias at which the steady-state frequency sits `detuning` below f_max,
/// found by bisection on the first half flux period.
pub fn bias_for_detuning(
    spec: &TransmonSpec,
    transfer: &FluxTransfer,
    detuning: f64,
) -> Result<f64, CliError> {
    if transfer.k == 0.0 {
        return Err(CliError::Config("transfer k must be nonzero".into()));
    }
    let f_target = spec.f_max - detuning;
    let f_min = device::f01(spec, 0.5).map_err(CliError::Device)?;
    if f_target < f_min || detuning < 0.0 {
        return Err(CliError::Config(format!(
            "detuning {detuning:e} Hz is outside the tunable band ({:e} Hz deep)",
            spec.f_max - f_min
        )));
    }
    let mut lo = 0.0f64; // phi
    let mut hi = 0.5f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = device::f01(spec, mid).map_err(CliError::Device)?;
        if f > f_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    Ok((phi - transfer.offset) / transfer.k)
}

#[derive(Debug, Serialize)]
struct PulseReport {
    shape: PulseShape,
    tau_s: f64,
    amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_fast_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    amplitude_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reported_settle_s: Option<f64>,
    /// Settling of the simulated plant output into +-1% / +-5% bands [s].
    settle_1pct_s: f64,
    settle_5pct_s: f64,
    rise_10_90_s: Option<f64>,
}

fn waveform_csv(w: &Waveform, value_header: &str) -> String {
    let mut out = format!("t_s,{value_header}\n");
    for (i, &v) in w.samples.iter().enumerate() {
        out.push_str(&format!("{},{}\n", fmt_f64(w.time(i)), fmt_f64(v)));
    }
    out
}

fn rise_time_10_90(w: &Waveform, final_value: f64) -> Option<f64> {
    if final_value == 0.0 {
        return None;
    }
    let lo = 0.1 * final_value;
    let hi = 0.9 * final_value;
    let crossing = |level: f64| {
        w.samples.iter().position(|&v| {
            if final_value > 0.0 {
                v >= level
            } else {
                v <= level
            }
        })
    };
    let t_lo = crossing(lo)?;
    let t_hi = crossing(hi)?;
    Some(w.time(t_hi) - w.time(t_lo))
}

pub fn run_pulse(config: &PulseConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let amplitude = match config.detuning_hz {
        Some(detuning) => bias_for_detuning(&config.transmon, &config.transfer, detuning)?,
        None => config.amplitude,
    };
    let plant = PlantModel::FirstOrder { tau: config.tau };
    let n_total = (config.duration / config.dt).ceil() as usize + 1;

    let (input, reported_settle, tau_fast) = match config.shape {
        PulseShape::Square => {
            let pulse =
                square_smoothed(amplitude, config.t_start, config.t_stop, config.edge, config.dt)?;
            (extend(&pulse, n_total), None, None)
        }
        PulseShape::Predistort => {
            let constraints = PredistortionConstraints {
                amplitude_cap: config.amplitude_cap,
                settle_band: config.settle_band,
                max_settle: config.max_settle,
            };
            let (u, settle) = constrained_predistort(config.tau, amplitude, &constraints, config.dt)?;
            (
                extend_hold(&u, n_total),
                Some(settle),
                Some(config.tau / config.amplitude_cap),
            )
        }
        PulseShape::Deconvolve => {
            // Target: ideal step of the given amplitude from the first sample.
            let mut target = vec![amplitude; n_total];
            target[0] = 0.0;
            let target = Waveform::new(config.dt, target)?;
            let u = deconvolve(&plant, &target, config.lambda)?;
            (u, None, None)
        }
    };

    let response = plant_response(&plant, &input)?;
    let trace = frequency_trace(
        &config.transmon,
        &config.transfer,
        &input,
        &plant,
        config.blur_sigma,
    )?;

    write_file(&out_dir.join("input.csv"), &waveform_csv(&input, "value"))?;
    write_file(&out_dir.join("response.csv"), &waveform_csv(&response, "value"))?;
    write_file(&out_dir.join("trace.csv"), &waveform_csv(&trace, "f01_hz"))?;

    // Settling against the step amplitude (square pulses settle back to 0,
    // so measure within the plateau window).
    let (settle_ref, settle_slice) = match config.shape {
        PulseShape::Square => {
            let plateau_end = ((config.t_stop - config.edge) / config.dt) as usize;
            (amplitude, &response.samples[..plateau_end.min(response.len())])
        }
        _ => (amplitude, &response.samples[..]),
    };
    let settle_wave = Waveform::new(config.dt, settle_slice.to_vec())?;
    let settle_1 = settling_time(&settle_wave, settle_ref, 0.01)?;
    let settle_5 = settling_time(&settle_wave, settle_ref, 0.05)?;

    let report = PulseReport {
        shape: config.shape,
        tau_s: config.tau,
        amplitude,
        tau_fast_s: tau_fast,
        amplitude_cap: matches!(config.shape, PulseShape::Predistort)
            .then_some(config.amplitude_cap),
        reported_settle_s: reported_settle,
        settle_1pct_s: settle_1,
        settle_5pct_s: settle_5,
        rise_10_90_s: rise_time_10_90(&settle_wave, settle_ref),
    };
    write_file(&out_dir.join("report.json"), &to_pretty_json(&report))?;
    write_manifest(
        out_dir,
        "pulse",
        config,
        None,
        started,
        &["input.csv", "response.csv", "trace.csv", "report.json"],
    )
}

/// Pads a waveform with zeros to the requested length.
fn extend(w: &Waveform, n: usize) -> Waveform {
    let mut samples = w.samples.clone();
    samples.resize(n.max(samples.len()), 0.0);
    Waveform { dt: w.dt, samples }
}

/// Pads a waveform by holding its final value.
fn extend_hold(w: &Waveform, n: usize) -> Waveform {
    let mut samples = w.samples.clone();
    let last = *samples.last().unwrap_or(&0.0);
    samples.resize(n.max(samples.len()), last);
    Waveform { dt: w.dt, samples }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum SweepVariant {
    /// Name of a built-in design variant.
    Builtin(String),
    /// Inline scene description.
    Inline { name: String, scene: Box<Scene> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub variants: Vec<SweepVariant>,
    pub spacing: f64,
    pub tolerance: f64,
    /// Probe line: axial field vs radius at this distance past the tip [m].
    pub probe_offset: f64,
    pub probe_r_max: f64,
    pub probe_points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variants: vec![
                SweepVariant::Builtin("baseline".into()),
                SweepVariant::Builtin("dense_elongated".into()),
                SweepVariant::Builtin("dense_elongated_optimized_coil".into()),
            ],
            spacing: 50e-6,
            tolerance: 1e-7,
            probe_offset: 1.0e-3,
            probe_r_max: 4.0e-3,
            probe_points: 81,
        }
    }
}

/// Built-in improvement variants. The baseline is the reference hose; the
/// second raises the layer density and extends all superconducting shells
/// toward the cavity with a wide coil filling the sleeve bore; the third
/// additionally packs the winding tight against the stack input for better
/// core coupling.
pub fn builtin_variant(name: &str) -> Result<(Scene, f64), CliError> {
    match name {
        "baseline" => {
            let scene = build_paper_scene(&SceneOverrides::default())?;
            let tip = hose_tip_z(&scene);
            Ok((scene, tip))
        }
        "dense_elongated" => dense_variant(false),
        "dense_elongated_optimized_coil" => dense_variant(true),
        other => Err(CliError::Config(format!("unknown sweep variant `{other}`"))),
    }
}

fn hose_tip_z(scene: &Scene) -> f64 {
    scene
        .regions
        .iter()
        .map(|r| r.shape.z_max())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Denser stack with superconducting shells elongated past the ferromagnets
/// on the cavity side. The optimized-coil variant shortens the winding and
/// butts it against the stack input.
fn dense_variant(optimized_coil: bool) -> Result<(Scene, f64), CliError> {
    use crate::geometry::{CoilSpec, Domain, Material, Region, RegionShape};

    let wall_thickness = crate::geometry::paper::WALL_THICKNESS;
    let tip = wall_thickness; // flush with the wall's inner face
    let fm_len = 10.0e-3;
    let sc_extra = 1.5e-3; // superconducting shells pushed into the cavity
    let mut regions = vec![Region::new(
        RegionShape::Disk { r_out: 0.5e-3, z_min: tip - fm_len, z_max: tip },
        "mu_metal",
        "core",
    )];
    // Six alternating pairs at 100 um, denser than the reference stack.
    let mut r = 0.5e-3;
    for pair in 0..6 {
        regions.push(Region::new(
            RegionShape::Annulus {
                r_in: r,
                r_out: r + 100e-6,
                z_min: tip - fm_len,
                z_max: tip,
            },
            "mu_metal",
            &format!("shell_{}_mu_metal", 2 * pair + 1),
        ));
        r += 100e-6;
        regions.push(Region::new(
            RegionShape::Annulus {
                r_in: r,
                r_out: r + 100e-6,
                z_min: tip - fm_len,
                z_max: tip + sc_extra,
            },
            "aluminum_sc",
            &format!("shell_{}_aluminum_sc", 2 * pair + 2),
        ));
        r += 100e-6;
    }
    // Outer sleeve with the assembly clearance, also elongated.
    let sleeve_in = r + crate::geometry::paper::SLEEVE_CLEARANCE;
    regions.push(Region::new(
        RegionShape::Annulus {
            r_in: sleeve_in,
            r_out: sleeve_in + 200e-6,
            z_min: tip - fm_len - 10.0e-3,
            z_max: tip + sc_extra,
        },
        "aluminum_sc",
        "outer_sleeve",
    ));

    // Wide coil matched to the sleeve bore; the optimized variant is a
    // short, tightly packed winding right at the stack input.
    let coil = if optimized_coil {
        CoilSpec {
            turns: 10,
            radius: sleeve_in - 0.35e-3,
            length: 2.0e-3,
            center_z: tip - fm_len - 1.0e-3,
            current: 10e-3,
        }
    } else {
        CoilSpec {
            turns: 10,
            radius: sleeve_in - 0.45e-3,
            length: 4.0e-3,
            center_z: tip - fm_len - 2.0e-3,
            current: 10e-3,
        }
    };

    let hole_radius = (sleeve_in + 200e-6 + 0.25e-3).max(2.2e-3);
    let domain = Domain { r_max: 25.0e-3, z_min: -30.0e-3, z_max: 30.0e-3 };
    let scene = Scene {
        materials: vec![
            Material::isotropic("vacuum", 1.0),
            Material::isotropic("mu_metal", 1.0e4).with_saturation(0.8),
            Material::isotropic("aluminum_sc", 1.0e-4),
        ],
        regions,
        coil,
        wall: Region::new(
            RegionShape::Annulus {
                r_in: hole_radius,
                r_out: domain.r_max,
                z_min: 0.0,
                z_max: wall_thickness,
            },
            "aluminum_sc",
            "cavity_wall",
        ),
        probes: vec![(0.0, tip + sc_extra + 1.0e-3)],
        domain,
    };
    scene.validate()?;
    Ok((scene, tip + sc_extra))
}

#[derive(Debug, Serialize)]
struct SweepVariantStatus {
    name: String,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    peak_b_z: Option<f64>,
}

pub fn run_sweep(config: &SweepConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let mut csv = String::from("variant,r,z,b_z\n");
    let mut statuses = Vec::new();

    for variant in &config.variants {
        let (name, built) = match variant {
            SweepVariant::Builtin(name) => (name.clone(), builtin_variant(name)),
            SweepVariant::Inline { name, scene } => {
                let tip = hose_tip_z(scene);
                (name.clone(), Ok((*scene.clone(), tip)))
            }
        };
        let solved = built.and_then(|(scene, tip)| {
            let grid = GridSpec::from_domain(&scene.domain, config.spacing)?;
            let mg = rasterize(&scene, &grid)?;
            let opts = SolverOptions {
                tolerance: config.tolerance,
                ..Default::default()
            };
            let field = solve(&mg, &opts)?;
            Ok((field, tip))
        });
        match solved {
            Ok((field, tip)) => {
                let z = tip + config.probe_offset;
                let mut peak: f64 = 0.0;
                for k in 0..config.probe_points {
                    let r = config.probe_r_max * k as f64 / (config.probe_points - 1) as f64;
                    let (_, b_z) = probe(&field, (r, z))?;
                    peak = peak.max(b_z.abs());
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        name,
                        fmt_f64(r),
                        fmt_f64(z),
                        fmt_f64(b_z)
                    ));
                }
                statuses.push(SweepVariantStatus {
                    name,
                    status: "ok".into(),
                    peak_b_z: Some(peak),
                });
            }
            Err(err) => {
                // Per-variant failures are recorded; the sweep continues.
                statuses.push(SweepVariantStatus {
                    name,
                    status: format!("failed: {err}"),
                    peak_b_z: None,
                });
            }
        }
    }
    write_file(&out_dir.join("sweep.csv"), &csv)?;
    write_file(&out_dir.join("sweep.json"), &to_pretty_json(&statuses))?;
    write_manifest(out_dir, "sweep", config, None, started, &["sweep.csv", "sweep.json"])
}

// ---------------------------------------------------------------------------
// rf
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfEntry {
    #[serde(flatten)]
    pub spec: WaveguideSpec,
    /// Evaluation frequency [Hz].
    pub frequency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub waveguides: Vec<RfEntry>,
    /// Stub lengths for quarter-wave resonances [m].
    pub quarter_wave_lengths: Vec<f64>,
}

impl Default for RfConfig {
    fn default() -> Self {
        use crate::rfguard::WaveguideKind;
        Self {
            waveguides: vec![
                RfEntry {
                    spec: WaveguideSpec {
                        kind: WaveguideKind::Rectangular { a: 1.2e-3, b: 0.4e-3 },
                        length: 10.0e-3,
                    },
                    frequency: 60.0e9,
                },
                RfEntry {
                    spec: WaveguideSpec {
                        kind: WaveguideKind::Circular { diameter: 3.0e-3 },
                        length: 10.0e-3,
                    },
                    frequency: 20.0e9,
                },
            ],
            quarter_wave_lengths: vec![10.0e-3],
        }
    }
}

#[derive(Debug, Serialize)]
struct RfGuideReport {
    kind: serde_json::Value,
    length_m: f64,
    frequency_hz: f64,
    f_c_hz: f64,
    alpha_db_per_mm: f64,
    total_attenuation_db: f64,
}

#[derive(Debug, Serialize)]
struct RfReport {
    waveguides: Vec<RfGuideReport>,
    quarter_wave: Vec<serde_json::Value>,
}

pub fn run_rf(config: &RfConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let mut waveguides = Vec::new();
    for entry in &config.waveguides {
        let (f_c, alpha) = cutoff_and_attenuation(&entry.spec, entry.frequency)?;
        waveguides.push(RfGuideReport {
            kind: serde_json::to_value(&entry.spec.kind).expect("serializable"),
            length_m: entry.spec.length,
            frequency_hz: entry.frequency,
            f_c_hz: f_c,
            alpha_db_per_mm: alpha,
            total_attenuation_db: alpha * entry.spec.length * 1e3,
        });
    }
    let quarter = config
        .quarter_wave_lengths
        .iter()
        .map(|&length| {
            let f = quarter_wave(length)?;
            Ok(serde_json::json!({ "length_m": length, "f_hz": f }))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = RfReport { waveguides, quarter_wave: quarter };
    write_file(&out_dir.join("rf.json"), &to_pretty_json(&report))?;
    write_manifest(out_dir, "rf", config, None, started, &["rf.json"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn fmt_f64_gives_17_significant_digits() {
        assert_eq!(fmt_f64(25.132741228718345e-6), "2.5132741228718345e-5");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        // Round-trips exactly.
        let x = std::f64::consts::PI * 1e-7;
        let back: f64 = fmt_f64(x).parse().unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn scene_presets_and_bad_preset() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.json");
        run_scene(&SceneConfig::default(), &path).unwrap();
        let scene = Scene::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(scene.regions.len(), 9);

        let vac = SceneConfig { preset: "vacuum".into(), ..Default::default() };
        run_scene(&vac, &path).unwrap();
        let scene = Scene::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert!(scene.regions.is_empty());

        let bad = SceneConfig { preset: "nope".into(), ..Default::default() };
        let err = run_scene(&bad, &path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rf_report_matches_filter_numbers() {
        let dir = tempdir().unwrap();
        run_rf(&RfConfig::default(), dir.path()).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("rf.json")).unwrap())
                .unwrap();
        let cut = &report["waveguides"][0];
        assert!((cut["f_c_hz"].as_f64().unwrap() - 124.9e9).abs() < 0.1e9);
        assert!((cut["alpha_db_per_mm"].as_f64().unwrap() - 20.0).abs() < 2.0);
        let bore = &report["waveguides"][1];
        assert!((bore["f_c_hz"].as_f64().unwrap() - 58.6e9).abs() < 0.1e9);
        assert!((bore["alpha_db_per_mm"].as_f64().unwrap() - 10.0).abs() < 1.0);
        // Empty config produces an empty report.
        let empty = RfConfig { waveguides: vec![], quarter_wave_lengths: vec![] };
        run_rf(&empty, dir.path()).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("rf.json")).unwrap())
                .unwrap();
        assert_eq!(report["waveguides"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn fluxmap_requires_seed_with_noise() {
        let dir = tempdir().unwrap();
        let config = FluxmapConfig {
            noise_sigma: Some(1e6),
            seed: None,
            ..Default::default()
        };
        let err = run_fluxmap(&config, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn fluxmap_byte_identical_for_fixed_seed() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let config = FluxmapConfig {
            noise_sigma: Some(1e6),
            seed: Some(42),
            bias: BiasRange { start: -0.5, stop: 0.5, points: 31 },
            ..Default::default()
        };
        run_fluxmap(&config, dir_a.path()).unwrap();
        run_fluxmap(&config, dir_b.path()).unwrap();
        let a = std::fs::read(dir_a.path().join("fluxmap.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("fluxmap.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pulse_square_report_has_rise_time() {
        let dir = tempdir().unwrap();
        let config = PulseConfig {
            detuning_hz: Some(700e6),
            t_stop: 12.0e-6,
            duration: 14.0e-6,
            ..Default::default()
        };
        run_pulse(&config, dir.path()).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        let rise = report["rise_10_90_s"].as_f64().unwrap();
        assert!((rise - 2.197 * 2.0e-6).abs() < 0.05e-6, "rise {rise}");
        assert!(dir.path().join("trace.csv").exists());
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn bias_for_detuning_inverts_f01() {
        let spec = TransmonSpec { f_max: 6.6e9, e_c: 295e6, d: 0.31 };
        let transfer = FluxTransfer { k: 0.1, offset: 0.0 };
        let bias = bias_for_detuning(&spec, &transfer, 700e6).unwrap();
        let f = device::f01(&spec, transfer.phi(bias)).unwrap();
        assert!((f - (6.6e9 - 700e6)).abs() < 1.0);
        // Beyond the tunable depth: error.
        assert!(bias_for_detuning(&spec, &transfer, 4.0e9).is_err());
    }
}
