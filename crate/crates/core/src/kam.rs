//! Frequency estimation, the small-divisor condition, and persistence scans
//! for quasi-periodic orbits of nearly integrable systems.
//!
//! A torus "survives" here in an operational sense: over a long finite
//! window, the estimated frequency stays within a declared tolerance of the
//! unperturbed frequency map and the action variables oscillate within a
//! declared fraction of their initial size. Infinite-time invariance is not
//! numerically accessible; tolerances ride along in the report.
//!
//! The scan integrates the canonical angle-action equations
//! `theta' = grad H0(I) + dP/dI`, `I' = -dP/dtheta` directly, the dynamics
//! that governs most probable paths once the diffusion passes the
//! Hamiltonian-column condition.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{deterministic_flow_with, FlowOptions, Hamiltonian, NearlyIntegrable};
use crate::noise::{check_hamiltonian_columns, DiffusionField};
use crate::phase::{DomainBox, PhasePoint};

/// Estimated frequencies with per-component error bars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyVector {
    pub omega: Vec<f64>,
    pub estimated_error: Vec<f64>,
}

/// Parameters of the persistence theory: smoothness exponent `l`, the
/// auxiliary exponent `nu` with `l > 2 nu > 2n`, the small-divisor constant
/// `alpha`, the perturbation size `eta`, and the truncation bound on `|k|_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KamParams {
    pub smoothness: f64,
    pub nu: f64,
    pub alpha: f64,
    pub eta: f64,
    pub k_max: i64,
    /// Proportionality constant in the alpha-from-eta scaling (the theory
    /// fixes only the exponent).
    pub alpha_scale: f64,
}

impl KamParams {
    pub fn new(smoothness: f64, nu: f64, alpha: f64, eta: f64, k_max: i64) -> Result<Self> {
        let p = KamParams {
            smoothness,
            nu,
            alpha,
            eta,
            k_max,
            alpha_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness > 2.0 * self.nu) {
            return Err(Error::InvalidParameters(format!(
                "need l > 2 nu, got l = {}, nu = {}",
                self.smoothness, self.nu
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameters("alpha must be positive".into()));
        }
        if self.k_max < 1 {
            return Err(Error::InvalidParameters("k_max must be at least 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidParameters("eta must be nonnegative".into()));
        }
        Ok(())
    }

    /// Checks the dimension-dependent part of `l > 2 nu > 2n`.
    pub fn validate_for_dof(&self, dof: usize) -> Result<()> {
        self.validate()?;
        if !(self.nu > dof as f64) {
            return Err(Error::InvalidParameters(format!(
                "need nu > n, got nu = {} for n = {dof}",
                self.nu
            )));
        }
        Ok(())
    }

    /// Small-divisor exponent `tau = nu - 1`.
    pub fn tau(&self) -> f64 {
        self.nu - 1.0
    }
}

/// The admissible small-divisor constant at perturbation size `eta`:
/// `alpha_scale * eta^(1/2 - nu/l)`.
pub fn alpha_from_eta(eta: f64, params: &KamParams) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameters("eta must be positive".into()));
    }
    let exponent = 0.5 - params.nu / params.smoothness;
    if exponent <= 0.0 {
        return Err(Error::InvalidParameters(format!(
            "exponent 1/2 - nu/l = {exponent} must be positive"
        )));
    }
    Ok(params.alpha_scale * eta.powf(exponent))
}

/// Outcome of the small-divisor check: the minimum of `|omega . k| |k|_1^tau`
/// over `0 < |k|_1 <= k_max`, its argmin, and the margin against `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub passes: bool,
    pub worst_k: Vec<i64>,
    /// `min_product - alpha`; nonnegative means the condition holds at the
    /// truncation bound.
    pub margin: f64,
    pub min_product: f64,
    pub k_max: i64,
}

/// Brute-force minimum of `|omega . k| |k|_1^tau` over the truncated lattice.
/// Reported argmins are sign-canonical (first nonzero component positive);
/// the product is sign-invariant.
pub fn diophantine_check(omega: &DVector<f64>, params: &KamParams) -> Result<DiophantineReport> {
    params.validate()?;
    if omega.is_empty() {
        return Err(Error::contract("frequency vector must be nonempty"));
    }
    let tau = params.tau();
    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut k = vec![0i64; omega.len()];
    visit_lattice(&mut k, 0, params.k_max, &mut |k| {
        let dot: f64 = k
            .iter()
            .zip(omega.iter())
            .map(|(&ki, &wi)| ki as f64 * wi)
            .sum();
        let l1: i64 = k.iter().map(|ki| ki.abs()).sum();
        let product = dot.abs() * (l1 as f64).powf(tau);
        if best.as_ref().is_none_or(|(b, _)| product < *b) {
            best = Some((product, k.to_vec()));
        }
    });
    let (min_product, worst_k) = best.expect("lattice is nonempty for k_max >= 1");
    Ok(DiophantineReport {
        passes: min_product >= params.alpha,
        worst_k,
        margin: min_product - params.alpha,
        min_product,
        k_max: params.k_max,
    })
}

/// Enumerates k with `0 < |k|_1 <= budget` and sign-canonical leading entry,
/// in lexicographic order.
fn visit_lattice(k: &mut [i64], depth: usize, budget: i64, f: &mut impl FnMut(&[i64])) {
    if depth == k.len() {
        if k.iter().any(|&ki| ki != 0) {
            f(k);
        }
        return;
    }
    let leading_zero = k[..depth].iter().all(|&ki| ki == 0);
    let lo = if leading_zero { 0 } else { -budget };
    for v in lo..=budget {
        k[depth] = v;
        visit_lattice(k, depth + 1, budget - v.abs(), f);
    }
    k[depth] = 0;
}

/// One torus at one perturbation size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistenceRow {
    pub eta: f64,
    pub initial_action: Vec<f64>,
    pub omega: Option<Vec<f64>>,
    pub omega_error: Option<Vec<f64>>,
    /// Sup-norm distance of the estimated frequency from `grad H0(I0)`.
    pub drift: Option<f64>,
    /// Sup-norm excursion of the action variables from `I0`.
    pub oscillation: Option<f64>,
    pub survived: Option<bool>,
    /// Frequency-estimation failure, when one occurred.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalSummary {
    pub eta: f64,
    pub survived: usize,
    /// Rows with a usable frequency estimate.
    pub counted: usize,
    pub failed: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistenceReport {
    pub rows: Vec<PersistenceRow>,
    pub survival: Vec<SurvivalSummary>,
    /// Least-squares slope of log mean drift against log eta over the
    /// positive perturbation sizes, when at least two are available.
    pub drift_loglog_slope: Option<f64>,
    pub drift_tol: f64,
    pub oscillation_rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Frequency drift above this fails the torus (absolute, per component
    /// sup norm).
    pub drift_tol: f64,
    /// Action oscillation above this fraction of |I0| fails the torus.
    pub oscillation_rel_tol: f64,
    pub flow: FlowOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            drift_tol: 1e-3,
            oscillation_rel_tol: 0.05,
            flow: FlowOptions::default(),
        }
    }
}

/// The nearly integrable dynamics in its angle-action chart, driving the
/// persistence scan. With coordinates x = (theta, I) the canonical equations
/// reproduce `theta' = grad H0 + dP/dI`, `I' = -dP/dtheta`.
struct AngleActionSystem<'a> {
    inner: &'a dyn NearlyIntegrable,
}

impl Hamiltonian for AngleActionSystem<'_> {
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        let n = self.dof();
        let theta = x.rows(0, n).clone_owned();
        let action = x.rows(n, n).clone_owned();
        self.inner.h0(&action) + self.inner.perturbation(&theta, &action)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.gradient_into(x, &mut out);
        out
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let n = self.dof();
        let theta = x.rows(0, n).clone_owned();
        let action = x.rows(n, n).clone_owned();
        let dtheta = self.inner.perturbation_theta_gradient(&theta, &action);
        let mut daction = self.inner.h0_gradient(&action);
        daction += self.inner.perturbation_action_gradient(&theta, &action);
        out.rows_mut(0, n).copy_from(&dtheta);
        out.rows_mut(n, n).copy_from(&daction);
    }

    fn separable(&self) -> bool {
        self.inner.perturbation_action_independent()
    }
}

/// Least-squares slope of a uniformly sampled series, with the residual-based
/// standard error of the slope.
fn slope_with_error(series: &[f64], dt: f64) -> (f64, f64) {
    let n = series.len() as f64;
    let t_mean = dt * (series.len() - 1) as f64 / 2.0;
    let y_mean = series.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (k, &y) in series.iter().enumerate() {
        let tc = k as f64 * dt - t_mean;
        sxx += tc * tc;
        sxy += tc * (y - y_mean);
    }
    let slope = sxy / sxx;
    let mut ss_res = 0.0;
    for (k, &y) in series.iter().enumerate() {
        let tc = k as f64 * dt - t_mean;
        let e = y - y_mean - slope * tc;
        ss_res += e * e;
    }
    let dof = (series.len() - 2).max(1) as f64;
    let se = (ss_res / dof / sxx).sqrt();
    (slope, se)
}

/// Hann-windowed discrete Fourier magnitude of `exp(i residual_k)` at
/// angular frequency `freq`.
fn windowed_dft_magnitude(residual: &[f64], dt: f64, freq: f64) -> f64 {
    let n = residual.len();
    let mut re = 0.0;
    let mut im = 0.0;
    for (k, &r) in residual.iter().enumerate() {
        let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / (n as f64 - 1.0)).cos());
        let phase = r - freq * (k as f64 * dt);
        re += w * phase.cos();
        im += w * phase.sin();
    }
    (re * re + im * im).sqrt()
}

/// Per-component frequency estimation: unwrap, least-squares slope, then a
/// Hann-windowed Fourier peak around the slope with three-point quadratic
/// interpolation. Sensible answers need a window covering tens of periods.
pub fn frequency_estimate(angles: &[DVector<f64>], t_max: f64) -> Result<FrequencyVector> {
    if angles.len() < 16 {
        return Err(Error::contract(
            "frequency estimation needs at least 16 samples",
        ));
    }
    if !(t_max > 0.0) {
        return Err(Error::contract("t_max must be positive"));
    }
    let n = angles[0].len();
    let dt = t_max / (angles.len() - 1) as f64;
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut omega = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    for j in 0..n {
        // unwrap by re-centering increments into (-pi, pi]; adding 2 pi k to
        // individual samples cannot change the result
        let mut unwrapped = Vec::with_capacity(angles.len());
        unwrapped.push(angles[0][j]);
        for (k, pair) in angles.windows(2).enumerate() {
            let d = pair[1][j] - pair[0][j];
            let centered = d - two_pi * (d / two_pi).round();
            if centered.abs() > 0.9 * std::f64::consts::PI {
                return Err(Error::SamplingTooCoarse {
                    index: k + 1,
                    magnitude: centered.abs(),
                });
            }
            unwrapped.push(unwrapped[k] + centered);
        }

        let (slope, slope_se) = slope_with_error(&unwrapped, dt);

        // demodulate at the slope, then refine via the windowed spectrum on
        // the integer bins around zero offset
        let residual: Vec<f64> = unwrapped
            .iter()
            .enumerate()
            .map(|(k, &u)| u - slope * (k as f64 * dt))
            .collect();
        let bin = two_pi / t_max;
        let mags: Vec<f64> = (-3..=3)
            .map(|m| windowed_dft_magnitude(&residual, dt, m as f64 * bin))
            .collect();
        let peak = mags
            .iter()
            .enumerate()
            .skip(1)
            .take(5)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(3);
        let (a, b, c) = (mags[peak - 1], mags[peak], mags[peak + 1]);
        let denom = a - 2.0 * b + c;
        let offset = if denom.abs() > 1e-300 {
            0.5 * (a - c) / denom
        } else {
            0.0
        };
        let refined = slope + ((peak as f64 - 3.0) + offset.clamp(-0.5, 0.5)) * bin;

        omega.push(refined);
        // numerical floor keeps the bar meaningful for exactly linear input
        errors.push(slope_se.max(1e-12 * (1.0 + refined.abs())));
    }
    Ok(FrequencyVector {
        omega,
        estimated_error: errors,
    })
}

/// Scans perturbation sizes and initial tori: integrates the angle-action
/// flow, estimates frequencies, and grades survival.
///
/// Preconditions: the diffusion passes the Hamiltonian-column check on a box
/// covering the tori (so the most probable dynamics is the deterministic
/// flow), and every unperturbed frequency `grad H0(I0)` is Diophantine at the
/// given parameters. No stochastic trajectories enter the verdicts.
pub fn torus_persistence_scan(
    sys: &dyn NearlyIntegrable,
    field: &dyn DiffusionField,
    etas: &[f64],
    initial_actions: &[DVector<f64>],
    t_max: f64,
    n_steps: usize,
    params: &KamParams,
    opts: &ScanOptions,
) -> Result<PersistenceReport> {
    let n = sys.dof();
    params.validate_for_dof(n)?;
    if etas.is_empty() || initial_actions.is_empty() {
        return Err(Error::contract(
            "need at least one eta and one initial torus",
        ));
    }
    if etas.iter().any(|&e| e < 0.0) {
        return Err(Error::contract("etas must be nonnegative"));
    }

    // the stochastic side of the story: most probable paths follow the
    // deterministic flow only when the columns of sigma are Hamiltonian
    let max_action = initial_actions
        .iter()
        .flat_map(|a| a.iter())
        .fold(0.0_f64, |m, &v| m.max(v));
    let radius = (2.0 * max_action).sqrt() * 1.2 + 0.5;
    let cartesian_box = DomainBox::centered_cube(2 * n, radius);
    let column_check = check_hamiltonian_columns(field, &cartesian_box, 1024)?;
    if !column_check.passed() {
        return Err(Error::contract(format!(
            "diffusion field fails the Hamiltonian-column condition on the scan box \
             (worst magnitude {:.3e}); most probable paths are not the deterministic flow",
            column_check.worst_magnitude
        )));
    }

    for (i, action) in initial_actions.iter().enumerate() {
        if action.len() != n {
            return Err(Error::contract(format!(
                "initial action {i} has wrong dimension"
            )));
        }
        let report = diophantine_check(&sys.h0_gradient(action), params)?;
        if !report.passes {
            return Err(Error::contract(format!(
                "unperturbed frequency of torus {i} is not ({}, {})-Diophantine up to |k|_1 <= {}: \
                 worst k = {:?}, product {:.3e}",
                params.alpha,
                params.tau(),
                params.k_max,
                report.worst_k,
                report.min_product
            )));
        }
    }

    let cases: Vec<(usize, usize)> = (0..etas.len())
        .flat_map(|e| (0..initial_actions.len()).map(move |a| (e, a)))
        .collect();
    let rows: Vec<PersistenceRow> = cases
        .into_par_iter()
        .map(|(ei, ai)| -> Result<PersistenceRow> {
            let eta = etas[ei];
            let action0 = &initial_actions[ai];
            let perturbed = sys.at_eta(eta);
            let angle_sys = AngleActionSystem {
                inner: perturbed.as_ref(),
            };
            let omega_ref = sys.h0_gradient(action0);

            let mut x0 = DVector::zeros(2 * n);
            x0.rows_mut(n, n).copy_from(action0);
            let x0 = PhasePoint::new(x0)?;
            let path = deterministic_flow_with(&angle_sys, &x0, t_max, n_steps, &opts.flow)?;

            let thetas: Vec<DVector<f64>> = path
                .nodes()
                .iter()
                .map(|x| x.rows(0, n).clone_owned())
                .collect();
            let oscillation = path
                .nodes()
                .iter()
                .map(|x| {
                    (0..n)
                        .map(|j| (x[n + j] - action0[j]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);

            match frequency_estimate(&thetas, t_max) {
                Ok(freq) => {
                    let drift = freq
                        .omega
                        .iter()
                        .zip(omega_ref.iter())
                        .map(|(&w, &r)| (w - r).abs())
                        .fold(0.0, f64::max);
                    let survived = drift <= opts.drift_tol
                        && oscillation <= opts.oscillation_rel_tol * action0.norm();
                    Ok(PersistenceRow {
                        eta,
                        initial_action: action0.iter().copied().collect(),
                        omega: Some(freq.omega),
                        omega_error: Some(freq.estimated_error),
                        drift: Some(drift),
                        oscillation: Some(oscillation),
                        survived: Some(survived),
                        failure: None,
                    })
                }
                Err(e) => Ok(PersistenceRow {
                    eta,
                    initial_action: action0.iter().copied().collect(),
                    omega: None,
                    omega_error: None,
                    drift: None,
                    oscillation: Some(oscillation),
                    survived: None,
                    failure: Some(e.to_string()),
                }),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut survival = Vec::with_capacity(etas.len());
    for (ei, &eta) in etas.iter().enumerate() {
        let slice = &rows[ei * initial_actions.len()..(ei + 1) * initial_actions.len()];
        let failed = slice.iter().filter(|r| r.failure.is_some()).count();
        let counted = slice.len() - failed;
        let survived = slice.iter().filter(|r| r.survived == Some(true)).count();
        survival.push(SurvivalSummary {
            eta,
            survived,
            counted,
            failed,
            fraction: if counted > 0 {
                survived as f64 / counted as f64
            } else {
                0.0
            },
        });
    }

    // log-log drift trend across positive etas (the measure-estimate exponent
    // is only checked qualitatively)
    let mut log_pairs = Vec::new();
    for (ei, &eta) in etas.iter().enumerate() {
        if eta <= 0.0 {
            continue;
        }
        let slice = &rows[ei * initial_actions.len()..(ei + 1) * initial_actions.len()];
        let drifts: Vec<f64> = slice.iter().filter_map(|r| r.drift).collect();
        if drifts.is_empty() {
            continue;
        }
        let mean = drifts.iter().sum::<f64>() / drifts.len() as f64;
        if mean > 0.0 {
            log_pairs.push((eta.ln(), mean.ln()));
        }
    }
    let drift_loglog_slope = if log_pairs.len() >= 2 {
        let np = log_pairs.len() as f64;
        let mx = log_pairs.iter().map(|p| p.0).sum::<f64>() / np;
        let my = log_pairs.iter().map(|p| p.1).sum::<f64>() / np;
        let sxx: f64 = log_pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = log_pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        Some(sxy / sxx)
    } else {
        None
    };

    Ok(PersistenceReport {
        rows,
        survival,
        drift_loglog_slope,
        drift_tol: opts.drift_tol,
        oscillation_rel_tol: opts.oscillation_rel_tol,
    })
}
