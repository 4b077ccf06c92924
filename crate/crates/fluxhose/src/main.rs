//! `fluxhose` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fluxhose::cli::{
    self, CliError, FieldConfig, FluxmapConfig, PulseConfig, PulseShape, RfConfig, SceneConfig,
    SweepConfig,
};
use fluxhose::geometry::SceneOverrides;
use fluxhose::magnetostatics::SolverMethod;

#[derive(Parser)]
#[command(
    name = "fluxhose",
    version,
    about = "Magnetic-hose flux control simulator: fields, flux maps, pulses, design sweeps, RF margins"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scene description JSON (reference device or vacuum coil).
    Scene(SceneArgs),
    /// Solve a scene and export the field grid, probe values and checks.
    Field(FieldArgs),
    /// Synthesize a two-qubit flux map; optionally fit a table.
    Fluxmap(FluxmapArgs),
    /// Build a flux pulse, simulate the line response and frequency trace.
    Pulse(PulseArgs),
    /// Solve hose design variants and compare output-field profiles.
    Sweep(SweepArgs),
    /// Waveguide cutoff/attenuation and quarter-wave filter report.
    Rf(RfArgs),
}

#[derive(Args)]
struct SceneArgs {
    /// Output path for the scene JSON.
    #[arg(long, default_value = "scene.json")]
    out: PathBuf,
    /// Scene preset: `paper` or `vacuum`.
    #[arg(long, default_value = "paper")]
    preset: String,
    /// Parameter overrides as inline JSON, e.g. '{"coil_current": 0.02}'.
    #[arg(long)]
    overrides: Option<String>,
    /// Parameter overrides from a JSON file.
    #[arg(long, conflicts_with = "overrides")]
    overrides_file: Option<PathBuf>,
}

#[derive(Args)]
struct FieldArgs {
    /// Scene JSON produced by `fluxhose scene` (or hand-written).
    #[arg(long)]
    scene: PathBuf,
    /// Grid spacing [m].
    #[arg(long, default_value_t = 50e-6)]
    spacing: f64,
    /// Coil current override [A].
    #[arg(long)]
    current: Option<f64>,
    /// Relative residual target.
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
    /// Iteration cap (default scales with the grid).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Solver: `cg` or `sor`.
    #[arg(long, default_value = "cg")]
    method: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FluxmapArgs {
    /// Config JSON overriding the built-in pair and bias range.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bias_start: Option<f64>,
    #[arg(long)]
    bias_stop: Option<f64>,
    #[arg(long)]
    bias_points: Option<usize>,
    /// Gaussian frequency noise sigma [Hz]; requires --seed.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit the synthesized map (or --fit-input) and write fit.json.
    #[arg(long)]
    fit: bool,
    /// CSV table to fit instead of the synthesized one.
    #[arg(long)]
    fit_input: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PulseArgs {
    /// Config JSON overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pulse shape: `square`, `predistort` or `deconvolve`.
    #[arg(long)]
    shape: Option<String>,
    /// Plant time constant [s].
    #[arg(long)]
    tau: Option<f64>,
    /// Drive amplitude [bias units].
    #[arg(long)]
    amplitude: Option<f64>,
    /// Steady-state detuning from f_max [Hz]; overrides --amplitude.
    #[arg(long)]
    detuning: Option<f64>,
    /// Pre-distortion amplitude cap (multiple of the step).
    #[arg(long)]
    cap: Option<f64>,
    /// Pre-distortion settling band (fraction).
    #[arg(long)]
    band: Option<f64>,
    /// Deconvolution regularization weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Gaussian blur sigma for the frequency trace [s].
    #[arg(long)]
    blur: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Config JSON with the variant list.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid spacing [m].
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RfArgs {
    /// Config JSON with waveguide entries and stub lengths.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Scene(args) => {
            let overrides = match (&args.overrides, &args.overrides_file) {
                (Some(text), _) => SceneOverrides::from_json(text)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    SceneOverrides::from_json(&text)?
                }
                (None, None) => SceneOverrides::default(),
            };
            let config = SceneConfig { preset: args.preset, overrides };
            cli::run_scene(&config, &args.out)
        }
        Command::Field(args) => {
            let method = match args.method.as_str() {
                "cg" => SolverMethod::ConjugateGradient,
                "sor" => SolverMethod::SuccessiveOverRelaxation,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown method `{other}` (expected `cg` or `sor`)"
                    )))
                }
            };
            let config = FieldConfig {
                scene: args.scene,
                spacing: args.spacing,
                current: args.current,
                tolerance: args.tolerance,
                max_iterations: args.max_iter,
                method,
            };
            cli::run_field(&config, &args.out_dir)
        }
        Command::Fluxmap(args) => {
            let mut config: FluxmapConfig = load_config(&args.config)?;
            if let Some(start) = args.bias_start {
                config.bias.start = start;
            }
            if let Some(stop) = args.bias_stop {
                config.bias.stop = stop;
            }
            if let Some(points) = args.bias_points {
                config.bias.points = points;
            }
            if args.noise_sigma.is_some() {
                config.noise_sigma = args.noise_sigma;
            }
            if args.seed.is_some() {
                config.seed = args.seed;
            }
            if args.fit {
                config.fit = true;
            }
            if args.fit_input.is_some() {
                config.fit_input = args.fit_input;
                config.fit = true;
            }
            cli::run_fluxmap(&config, &args.out_dir)
        }
        Command::Pulse(args) => {
            let mut config: PulseConfig = load_config(&args.config)?;
            if let Some(shape) = &args.shape {
                config.shape = match shape.as_str() {
                    "square" => PulseShape::Square,
                    "predistort" => PulseShape::Predistort,
                    "deconvolve" => PulseShape::Deconvolve,
                    other => {
                        return Err(CliError::Config(format!(
                            "unknown shape `{other}` (expected square|predistort|deconvolve)"
                        )))
                    }
                };
            }
            if let Some(tau) = args.tau {
                config.tau = tau;
            }
            if let Some(amplitude) = args.amplitude {
                config.amplitude = amplitude;
                config.detuning_hz = None;
            }
            if args.detuning.is_some() {
                config.detuning_hz = args.detuning;
            }
            if let Some(cap) = args.cap {
                config.amplitude_cap = cap;
            }
            if let Some(band) = args.band {
                config.settle_band = band;
            }
            if let Some(lambda) = args.lambda {
                config.lambda = lambda;
            }
            if let Some(blur) = args.blur {
                config.blur_sigma = blur;
            }
            cli::run_pulse(&config, &args.out_dir)
        }
        Command::Sweep(args) => {
            let mut config: SweepConfig = load_config(&args.config)?;
            if let Some(spacing) = args.spacing {
                config.spacing = spacing;
            }
            cli::run_sweep(&config, &args.out_dir)
        }
        Command::Rf(args) => {
            let config: RfConfig = load_config(&args.config)?;
            cli::run_rf(&config, &args.out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
