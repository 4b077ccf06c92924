//! Damped least-squares fit of a coupled-pair model to flux-map data.
//!
//! Free parameters are {f_max, d, k, offset} per qubit plus the shared
//! coupling g; the charging energies stay fixed at their initial values
//! (they are measured independently and degenerate with f_max in a
//! frequency-only fit). The solver is a Levenberg iteration on the normal
//! equations with a numerically differenced Jacobian and multiplicative
//! damping of the diagonal.

use serde::Serialize;

use super::{coupled_spectrum, f01, Branch, CoupledPairSpec, DeviceError, FluxMapTable};

/// Names of the free parameters, in packing order.
pub const PARAMETER_NAMES: [&str; 9] = [
    "q1.f_max", "q1.d", "t1.k", "t1.offset",
    "q2.f_max", "q2.d", "t2.k", "t2.offset",
    "g",
];

const N_PARAMS: usize = 9;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative step size below which the iteration stops.
    pub step_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 100, step_tolerance: 1e-9, initial_lambda: 1e-3 }
    }
}

/// Fit outcome: parameter estimates, their 1-sigma values from the final
/// normal matrix, and residual statistics.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub pair: CoupledPairSpec,
    /// 1-sigma estimates in [`PARAMETER_NAMES`] order; `None` where the
    /// final normal matrix gave no finite estimate.
    pub sigma: Vec<Option<f64>>,
    /// Root-mean-square frequency residual [Hz].
    pub rms_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn pack(pair: &CoupledPairSpec) -> [f64; N_PARAMS] {
    [
        pair.q1.f_max, pair.q1.d, pair.t1.k, pair.t1.offset,
        pair.q2.f_max, pair.q2.d, pair.t2.k, pair.t2.offset,
        pair.g,
    ]
}

fn unpack(p: &[f64; N_PARAMS], template: &CoupledPairSpec) -> CoupledPairSpec {
    let mut pair = *template;
    pair.q1.f_max = p[0];
    pair.q1.d = p[1];
    pair.t1.k = p[2];
    pair.t1.offset = p[3];
    pair.q2.f_max = p[4];
    pair.q2.d = p[5];
    pair.t2.k = p[6];
    pair.t2.offset = p[7];
    pair.g = p[8];
    pair
}

/// Model frequency for one record under the given parameters.
fn predict(pair: &CoupledPairSpec, bias: f64, branch: Branch) -> Result<f64, DeviceError> {
    let f1 = f01(&pair.q1, pair.t1.phi(bias))?;
    let f2 = f01(&pair.q2, pair.t2.phi(bias))?;
    let (upper, lower, _) = coupled_spectrum(f1, f2, pair.g);
    Ok(match branch {
        Branch::Upper => upper,
        Branch::Lower => lower,
    })
}

fn residuals(
    table: &FluxMapTable,
    pair: &CoupledPairSpec,
    out: &mut Vec<f64>,
) -> Result<(), DeviceError> {
    out.clear();
    for record in &table.records {
        out.push(predict(pair, record.bias, record.branch)? - record.frequency);
    }
    Ok(())
}

fn cost(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum::<f64>()
}

/// Finite-difference step per parameter: relative with a scale floor so the
/// near-zero offsets still move.
fn fd_step(index: usize, value: f64) -> f64 {
    let floor = match index {
        0 | 4 => 1.0e3,  // frequencies [Hz]
        8 => 1.0,        // coupling [Hz]
        _ => 1.0e-7,     // dimensionless d, k, offset
    };
    (value.abs() * 1e-7).max(floor)
}

/// Cholesky solve of (A + lambda diag(A)) x = b for the damped step.
/// Returns the index of the first non-positive pivot on failure.
fn cholesky_solve(
    a: &[[f64; N_PARAMS]; N_PARAMS],
    lambda: f64,
    b: &[f64; N_PARAMS],
) -> Result<[f64; N_PARAMS], usize> {
    let mut m = *a;
    let max_diag = (0..N_PARAMS).map(|i| a[i][i]).fold(0.0f64, f64::max);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += lambda * a[i][i];
    }
    let mut l = [[0.0f64; N_PARAMS]; N_PARAMS];
    for i in 0..N_PARAMS {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-14 * max_diag.max(1e-300) {
                    return Err(i);
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = [0.0f64; N_PARAMS];
    for i in 0..N_PARAMS {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = [0.0f64; N_PARAMS];
    for i in (0..N_PARAMS).rev() {
        let mut sum = y[i];
        for k in (i + 1)..N_PARAMS {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Ok(x)
}

/// Inverse by Cholesky, for the 1-sigma estimates; `None` if singular.
fn invert(a: &[[f64; N_PARAMS]; N_PARAMS]) -> Option<[[f64; N_PARAMS]; N_PARAMS]> {
    let mut inv = [[0.0f64; N_PARAMS]; N_PARAMS];
    for (col, row) in inv.iter_mut().enumerate() {
        let mut e = [0.0f64; N_PARAMS];
        e[col] = 1.0;
        match cholesky_solve(a, 0.0, &e) {
            Ok(x) => *row = x,
            Err(_) => return None,
        }
    }
    Some(inv)
}

/// Fits the pair model to a flux-map table starting from `init`. Needs at
/// least six records per qubit and more than one distinct bias value; a
/// single bias leaves the transfer slope unidentifiable.
pub fn fit_fluxmap(
    table: &FluxMapTable,
    init: &CoupledPairSpec,
    opts: &FitOptions,
) -> Result<FitReport, DeviceError> {
    init.validate()?;
    let n = table.records.len();
    for qubit in [0u8, 1] {
        let count = table.records.iter().filter(|r| r.qubit == qubit).count();
        if count < 6 {
            return Err(DeviceError::Arity(format!(
                "qubit {qubit} has {count} records; at least 6 are required"
            )));
        }
    }
    let bias_min = table.records.iter().map(|r| r.bias).fold(f64::INFINITY, f64::min);
    let bias_max = table.records.iter().map(|r| r.bias).fold(f64::NEG_INFINITY, f64::max);
    if bias_max - bias_min == 0.0 {
        return Err(DeviceError::Degenerate { parameter: "k".into() });
    }

    let mut params = pack(init);
    let mut pair = unpack(&params, init);
    let mut res = Vec::with_capacity(n);
    residuals(table, &pair, &mut res)?;
    let mut current_cost = cost(&res);

    let mut lambda = opts.initial_lambda;
    let mut jac = vec![[0.0f64; N_PARAMS]; n];
    let mut trial_res = Vec::with_capacity(n);
    let mut jtj = [[0.0f64; N_PARAMS]; N_PARAMS];
    let mut jtr = [0.0f64; N_PARAMS];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        // Forward-difference Jacobian about the current point.
        for col in 0..N_PARAMS {
            let step = fd_step(col, params[col]);
            let mut bumped = params;
            bumped[col] += step;
            let bumped_pair = unpack(&bumped, init);
            if bumped_pair.validate().is_err() {
                // Step the other way at the parameter-space boundary.
                bumped[col] = params[col] - step;
            }
            let signed_step = bumped[col] - params[col];
            let bumped_pair = unpack(&bumped, init);
            residuals(table, &bumped_pair, &mut trial_res)?;
            for (row, jrow) in jac.iter_mut().enumerate() {
                jrow[col] = (trial_res[row] - res[row]) / signed_step;
            }
        }
        for i in 0..N_PARAMS {
            for j in 0..=i {
                let mut sum = 0.0;
                for jrow in &jac {
                    sum += jrow[i] * jrow[j];
                }
                jtj[i][j] = sum;
                jtj[j][i] = sum;
            }
            let mut sum = 0.0;
            for (jrow, r) in jac.iter().zip(&res) {
                sum += jrow[i] * r;
            }
            jtr[i] = -sum;
        }

        // Damped steps until one reduces the cost.
        loop {
            let delta = match cholesky_solve(&jtj, lambda, &jtr) {
                Ok(d) => d,
                Err(pivot) => {
                    return Err(DeviceError::Degenerate {
                        parameter: PARAMETER_NAMES[pivot].to_string(),
                    })
                }
            };
            let mut trial = params;
            for (p, d) in trial.iter_mut().zip(&delta) {
                *p += d;
            }
            let trial_pair = unpack(&trial, init);
            let trial_cost = if trial_pair.validate().is_ok() {
                match residuals(table, &trial_pair, &mut trial_res) {
                    Ok(()) => cost(&trial_res),
                    Err(_) => f64::INFINITY,
                }
            } else {
                f64::INFINITY
            };

            if trial_cost < current_cost {
                let step_norm: f64 =
                    delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let param_norm: f64 =
                    params.iter().map(|p| p * p).sum::<f64>().sqrt();
                params = trial;
                pair = trial_pair;
                std::mem::swap(&mut res, &mut trial_res);
                current_cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-14);
                if step_norm <= opts.step_tolerance * (param_norm + 1e-30) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                // No direction reduces the cost: treat as converged at the
                // current point rather than spinning.
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }

    let rms = (current_cost / n as f64).sqrt();
    // 1-sigma from the undamped normal matrix scaled by the residual.
    let dof = (n as f64 - N_PARAMS as f64).max(1.0);
    let variance = current_cost / dof;
    let sigma = match invert(&jtj) {
        Some(inv) => (0..N_PARAMS)
            .map(|i| {
                let v = inv[i][i] * variance;
                (v.is_finite() && v >= 0.0).then(|| v.sqrt())
            })
            .collect(),
        None => vec![None; N_PARAMS],
    };

    Ok(FitReport { pair, sigma, rms_residual: rms, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::super::{synth_fluxmap, FluxTransfer, TransmonSpec};
    use super::*;
    use crate::rng::SplitMix64;

    fn paper_pair() -> CoupledPairSpec {
        CoupledPairSpec {
            q1: TransmonSpec::new(6.6e9, 295e6, 0.31).unwrap(),
            q2: TransmonSpec::new(6.2e9, 295e6, 0.31).unwrap(),
            t1: FluxTransfer { k: 1.0, offset: 0.0 },
            t2: FluxTransfer { k: 0.2, offset: 0.0 },
            g: 5e6,
        }
    }

    fn perturbed_init() -> CoupledPairSpec {
        let mut init = paper_pair();
        init.q1.f_max = 6.62e9;
        init.q1.d = 0.25;
        init.t1.k = 1.08;
        init.t1.offset = 0.02;
        init.q2.f_max = 6.17e9;
        init.q2.d = 0.36;
        init.t2.k = 0.185;
        init.t2.offset = -0.015;
        init.g = 4e6;
        init
    }

    fn synth_biases() -> Vec<f64> {
        (0..=240).map(|i| -1.2 + i as f64 * 0.01).collect()
    }

    #[test]
    fn noiseless_round_trip_recovers_generators() {
        let truth = paper_pair();
        let (table, dropped) = synth_fluxmap(&truth, &synth_biases()).unwrap();
        assert!(dropped.is_empty());
        let report = fit_fluxmap(&table, &perturbed_init(), &FitOptions::default()).unwrap();
        assert!(report.rms_residual <= 1e3, "rms {:.3e}", report.rms_residual);
        let p = pack(&report.pair);
        let t = pack(&truth);
        for (i, (got, want)) in p.iter().zip(&t).enumerate() {
            let tol = if i == 8 { 1e4 } else { want.abs() * 1e-5 + 1e-6 };
            assert!(
                (got - want).abs() <= tol,
                "{}: {got} vs {want}",
                PARAMETER_NAMES[i]
            );
        }
    }

    #[test]
    fn noisy_round_trip_recovers_d_and_fmax() {
        let truth = paper_pair();
        let (mut table, _) = synth_fluxmap(&truth, &synth_biases()).unwrap();
        let mut rng = SplitMix64::new(20260810);
        for record in &mut table.records {
            record.frequency += 1e6 * rng.next_gaussian();
        }
        let report = fit_fluxmap(&table, &perturbed_init(), &FitOptions::default()).unwrap();
        let d_err = (report.pair.q1.d - 0.31).abs() / 0.31;
        let f_err = (report.pair.q1.f_max - 6.6e9).abs() / 6.6e9;
        assert!(d_err <= 0.02, "d recovered to {:.3}%", d_err * 100.0);
        assert!(f_err <= 0.001, "f_max recovered to {:.4}%", f_err * 100.0);
        // Sigma estimates exist and are small relative to the values.
        assert!(report.sigma[0].unwrap() < 5e6);
        assert!(report.sigma[1].unwrap() < 0.01);
    }

    #[test]
    fn too_few_points_is_arity_error() {
        let truth = paper_pair();
        let (table, _) = synth_fluxmap(&truth, &[0.0, 0.1]).unwrap();
        assert!(matches!(
            fit_fluxmap(&table, &truth, &FitOptions::default()),
            Err(DeviceError::Arity(_))
        ));
    }

    #[test]
    fn single_bias_degenerate_on_k() {
        let truth = paper_pair();
        let biases = vec![0.3; 12];
        let (table, _) = synth_fluxmap(&truth, &biases).unwrap();
        match fit_fluxmap(&table, &truth, &FitOptions::default()) {
            Err(DeviceError::Degenerate { parameter }) => assert_eq!(parameter, "k"),
            other => panic!("expected degeneracy on k, got {other:?}"),
        }
    }
}
