//! Monte Carlo tube probabilities, the analytic small-ball series, action
//! ratio predictions, and small-noise decay curves.
//!
//! Tube membership is checked on grid nodes in the sup norm over both time
//! and components, the norm under which a multi-dimensional Brownian ball
//! probability factorizes into per-component one-dimensional values. Checks
//! happen while stepping, so a trajectory that has already left the tube is
//! abandoned early; this changes no hit count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::noise::DiffusionField;
use crate::path::DiscretePath;
use crate::phase::PhasePoint;
use crate::sde::{fill_increment, stream_rng, NoiseConfig, SdeOptions, SdeStepper};
use crate::variational::{om_action, rate_function};

/// A reference path with a sup-norm radius; the tube is the set of paths
/// within `epsilon` of the reference at every grid node.
#[derive(Debug, Clone)]
pub struct TubeSpec {
    reference: DiscretePath,
    epsilon: f64,
}

impl TubeSpec {
    pub fn new(reference: DiscretePath, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::contract("tube radius must be positive and finite"));
        }
        Ok(TubeSpec { reference, epsilon })
    }

    pub fn reference(&self) -> &DiscretePath {
        &self.reference
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Trajectories in the tube start at the reference's initial point.
    pub fn x0(&self) -> PhasePoint {
        PhasePoint::new(self.reference.start().clone()).expect("validated at construction")
    }

    fn node_inside(&self, k: usize, x: &DVector<f64>) -> bool {
        let phi = self.reference.node(k);
        x.iter()
            .zip(phi.iter())
            .all(|(a, b)| (a - b).abs() <= self.epsilon)
    }
}

/// A binomial probability estimate with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub hits: u64,
    pub replicates: u64,
    pub seed: u64,
    pub gamma: f64,
}

impl MCEstimate {
    /// Zero hits: the estimate is 0 with no usable error bar, and callers
    /// must not take logarithms.
    pub fn is_underflow(&self) -> bool {
        self.hits == 0
    }
}

/// Fraction of trajectories staying inside the tube at every node, with
/// domain exits counted as misses.
///
/// Replicate j draws noise stream `(cfg.seed, j)`, so two estimates with the
/// same seed share their Brownian ensemble; ratio experiments rely on these
/// common random numbers to cancel the tube prefactor variance.
pub fn tube_probability_mc(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    tube: &TubeSpec,
    cfg: &NoiseConfig,
    opts: &SdeOptions,
) -> Result<MCEstimate> {
    cfg.validate()?;
    if cfg.replicates < 100 {
        return Err(Error::contract(
            "tube estimation needs at least 100 replicates",
        ));
    }
    let dim = tube.reference.dim();
    if sys.dim() != dim || field.dim() != dim {
        return Err(Error::contract(
            "system/field dimensions do not match the tube reference",
        ));
    }
    let dt = tube.reference.dt();
    if dt > opts.dt_max {
        return Err(Error::contract(format!(
            "dt = {dt:.3e} above stability threshold {:.3e}",
            opts.dt_max
        )));
    }

    let hits: u64 = (0..cfg.replicates)
        .into_par_iter()
        .map(|j| -> Result<u64> {
            Ok(tube_hit(sys, field, tube, cfg.gamma, cfg.seed, j, opts)? as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;

    let m = cfg.replicates as f64;
    let p_hat = hits as f64 / m;
    let std_err = (p_hat * (1.0 - p_hat) / m).sqrt();
    Ok(MCEstimate {
        p_hat,
        std_err,
        hits,
        replicates: cfg.replicates,
        seed: cfg.seed,
        gamma: cfg.gamma,
    })
}

/// Streams one replicate without materializing the trajectory; aborts at the
/// first node outside the tube or the domain box.
fn tube_hit(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    tube: &TubeSpec,
    gamma: f64,
    seed: u64,
    stream: u64,
    opts: &SdeOptions,
) -> Result<bool> {
    let dim = tube.reference.dim();
    let n_steps = tube.reference.n_steps();
    let dt = tube.reference.dt();
    let sqrt_dt = dt.sqrt();
    let mut rng = stream_rng(seed, stream);
    let mut stepper = SdeStepper::new(dim);
    let mut x = tube.reference.start().clone();
    let mut dw = DVector::zeros(dim);
    for k in 1..=n_steps {
        fill_increment(&mut rng, sqrt_dt, &mut dw);
        stepper.step(sys, field, opts.scheme, &mut x, &dw, dt, gamma);
        if !x.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite {
                what: "sde state",
                point: x.iter().copied().collect(),
            });
        }
        if let Some(domain) = &opts.domain {
            if !domain.contains(&x) {
                return Ok(false);
            }
        }
        if !tube.node_inside(k, &x) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Probability that a standard one-dimensional Brownian motion stays in
/// `[-epsilon, epsilon]` up to `t_max`: the alternating series
/// `(4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 t / (8 eps^2))`, truncated
/// after `terms` terms. The truncation error is bounded by the first omitted
/// term; underflow returns 0.
pub fn small_ball_oracle(epsilon: f64, t_max: f64, terms: usize) -> Result<f64> {
    if terms < 1 {
        return Err(Error::contract("need at least one series term"));
    }
    if !(epsilon > 0.0) || !(t_max > 0.0) {
        return Err(Error::contract("epsilon and t_max must be positive"));
    }
    let rate = std::f64::consts::PI * std::f64::consts::PI * t_max / (8.0 * epsilon * epsilon);
    let mut sum = 0.0;
    for k in 0..terms {
        let odd = (2 * k + 1) as f64;
        let term = (-odd * odd * rate).exp() / odd;
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    Ok((4.0 / std::f64::consts::PI * sum).max(0.0))
}

/// Predicted probability ratio of two tubes of equal radius,
/// `exp(-(total_1 - total_2)/2)`; the radius-dependent prefactor cancels.
pub fn om_ratio_prediction(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    phi1: &DiscretePath,
    phi2: &DiscretePath,
) -> Result<f64> {
    if phi1.n_steps() != phi2.n_steps()
        || (phi1.t_max() - phi2.t_max()).abs() > 1e-12 * phi1.t_max()
    {
        return Err(Error::contract("reference paths must share the time grid"));
    }
    let a1 = om_action(sys, field, phi1)?;
    let a2 = om_action(sys, field, phi2)?;
    Ok((-0.5 * (a1.total - a2.total)).exp())
}

/// One point of a decay curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdpPoint {
    pub gamma: f64,
    pub estimate: MCEstimate,
    /// Point carries enough hits (>= 30) for a meaningful log.
    pub usable: bool,
    /// `gamma^2 log p_hat` when usable.
    pub scaled_log_p: Option<f64>,
    /// Delta-method standard error `gamma^2 se / p_hat` when usable.
    pub scaled_log_se: Option<f64>,
}

/// Measured decay curve with its rate-function reference level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdpCurve {
    pub points: Vec<LdpPoint>,
    /// `-I(phi)`: the level the curve approaches as gamma decreases.
    pub rate_reference: f64,
}

const MIN_USABLE_HITS: u64 = 30;

/// Runs the tube estimator across noise intensities and records
/// `gamma^2 log p_hat` against the rate-function prediction.
pub fn ldp_curve(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    tube: &TubeSpec,
    gammas: &[f64],
    replicates: u64,
    seed: u64,
    opts: &SdeOptions,
) -> Result<LdpCurve> {
    if gammas.is_empty() {
        return Err(Error::contract("need at least one gamma"));
    }
    if gammas.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::contract("gammas must be positive"));
    }
    if gammas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::contract("gammas must be strictly descending"));
    }
    let x0 = tube.x0();
    let rate = rate_function(sys, field, tube.reference(), &x0)?
        .value()
        .expect("tube reference starts at its own initial point");

    let mut points = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let cfg = NoiseConfig::new(gamma, seed, replicates)?;
        let estimate = tube_probability_mc(sys, field, tube, &cfg, opts)?;
        let usable = estimate.hits >= MIN_USABLE_HITS;
        let (scaled_log_p, scaled_log_se) = if usable {
            (
                Some(gamma * gamma * estimate.p_hat.ln()),
                Some(gamma * gamma * estimate.std_err / estimate.p_hat),
            )
        } else {
            (None, None)
        };
        points.push(LdpPoint {
            gamma,
            estimate,
            usable,
            scaled_log_p,
            scaled_log_se,
        });
    }
    if points.iter().all(|p| !p.usable) {
        return Err(Error::EmptyCurve(format!(
            "no gamma out of {} produced {MIN_USABLE_HITS}+ hits",
            gammas.len()
        )));
    }
    Ok(LdpCurve {
        points,
        rate_reference: -rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::deterministic_flow;
    use crate::hamiltonian::systems::{Harmonic, Zero};
    use crate::noise::IdentityField;
    use approx::assert_relative_eq;

    #[test]
    fn small_ball_series_reference_values() {
        // k = 0 term (4/pi) exp(-pi^2/8) = 0.3707838, k = 1 correction -6.4e-6
        let v = small_ball_oracle(1.0, 1.0, 10).unwrap();
        assert_relative_eq!(v, 0.3707774297995239, epsilon = 1e-12);
        let one_term = small_ball_oracle(1.0, 1.0, 1).unwrap();
        assert!((one_term - v - 6.39e-6).abs() < 1e-7);
        // truncation is bounded by the first omitted term, so 2 terms agree
        // with 10 to the k = 2 scale
        let two_terms = small_ball_oracle(1.0, 1.0, 2).unwrap();
        assert!((two_terms - v).abs() < 1e-9);
    }

    #[test]
    fn small_ball_brownian_scaling_identity() {
        for (eps, t) in [(0.5, 2.0), (1.0, 0.25), (0.3, 1.7)] {
            let a = small_ball_oracle(eps, t, 24).unwrap();
            let b = small_ball_oracle(eps / t.sqrt(), 1.0, 24).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
    }

    #[test]
    fn small_ball_log_limit_at_tight_radius() {
        let eps = 0.1_f64;
        let v = small_ball_oracle(eps, 1.0, 10).unwrap();
        let limit = -std::f64::consts::PI.powi(2) / 8.0;
        assert!(
            (eps * eps * v.ln() - limit).abs() <= 0.003,
            "eps^2 log p = {}",
            eps * eps * v.ln()
        );
    }

    #[test]
    fn small_ball_underflows_to_zero() {
        assert_eq!(small_ball_oracle(1e-3, 1.0, 4).unwrap(), 0.0);
    }

    fn zero_system_tube(epsilon: f64, n: usize) -> TubeSpec {
        let x = PhasePoint::from_slice(&[0.0, 0.0]).unwrap();
        TubeSpec::new(DiscretePath::constant(&x, 1.0, n).unwrap(), epsilon).unwrap()
    }

    #[test]
    fn noiseless_flow_always_stays_in_a_wide_tube() {
        let sys = Harmonic::new(1);
        let field = IdentityField::new(1);
        let x0 = PhasePoint::from_slice(&[0.7, 0.0]).unwrap();
        let flow = deterministic_flow(&sys, &x0, 1.0, 500).unwrap();
        let tube = TubeSpec::new(flow, 0.5).unwrap();
        let cfg = NoiseConfig::new(0.0, 1, 200).unwrap();
        let est = tube_probability_mc(&sys, &field, &tube, &cfg, &SdeOptions::default()).unwrap();
        assert_eq!(est.p_hat, 1.0);
        // the deterministic Euler path is close to the flow but not equal,
        // so a narrow-enough tube must miss
        let narrow = TubeSpec::new(tube.reference().clone(), 1e-7).unwrap();
        let miss =
            tube_probability_mc(&sys, &field, &narrow, &cfg, &SdeOptions::default()).unwrap();
        assert_eq!(miss.p_hat, 0.0);
        assert!(miss.is_underflow());
        assert_eq!(miss.std_err, 0.0);
    }

    #[test]
    fn pure_noise_tube_probability_matches_the_series_squared() {
        // independence across components: p = small_ball(1, 1)^2
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        let tube = zero_system_tube(1.0, 1000);
        let cfg = NoiseConfig::new(1.0, 2024, 20_000).unwrap();
        let est = tube_probability_mc(&sys, &field, &tube, &cfg, &SdeOptions::default()).unwrap();
        let series = small_ball_oracle(1.0, 1.0, 16).unwrap();
        let expect = series * series;
        assert!(
            (est.p_hat - expect).abs() <= 5.0 * est.std_err,
            "p_hat {} vs series^2 {} (se {})",
            est.p_hat,
            expect,
            est.std_err
        );
    }

    #[test]
    fn widening_the_tube_can_only_add_hits() {
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        let cfg = NoiseConfig::new(1.0, 5, 2_000).unwrap();
        let narrow = zero_system_tube(0.8, 200);
        let wide = zero_system_tube(1.2, 200);
        let a = tube_probability_mc(&sys, &field, &narrow, &cfg, &SdeOptions::default()).unwrap();
        let b = tube_probability_mc(&sys, &field, &wide, &cfg, &SdeOptions::default()).unwrap();
        // same seed means the narrow tube's hit set is a subset of the wide one's
        assert!(a.hits <= b.hits);
    }

    #[test]
    fn estimates_are_bit_reproducible() {
        let sys = Harmonic::new(1);
        let field = IdentityField::new(1);
        let x = PhasePoint::from_slice(&[0.5, 0.0]).unwrap();
        let tube = TubeSpec::new(DiscretePath::constant(&x, 1.0, 300).unwrap(), 0.8).unwrap();
        let cfg = NoiseConfig::new(0.9, 77, 500).unwrap();
        let a = tube_probability_mc(&sys, &field, &tube, &cfg, &SdeOptions::default()).unwrap();
        let b = tube_probability_mc(&sys, &field, &tube, &cfg, &SdeOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_references_give_ratio_one() {
        let sys = Harmonic::new(1);
        let field = IdentityField::new(1);
        let x = PhasePoint::from_slice(&[0.4, 0.1]).unwrap();
        let phi = DiscretePath::constant(&x, 1.0, 50).unwrap();
        assert_eq!(om_ratio_prediction(&sys, &field, &phi, &phi).unwrap(), 1.0);
    }

    #[test]
    fn constant_path_ratio_has_closed_form() {
        // actions 0.36 and 0.09: ratio exp(-0.135)
        let sys = Harmonic::new(1);
        let field = IdentityField::new(1);
        let a = PhasePoint::from_slice(&[0.6, 0.0]).unwrap();
        let b = PhasePoint::from_slice(&[0.3, 0.0]).unwrap();
        let phi1 = DiscretePath::constant(&a, 1.0, 100).unwrap();
        let phi2 = DiscretePath::constant(&b, 1.0, 100).unwrap();
        let ratio = om_ratio_prediction(&sys, &field, &phi1, &phi2).unwrap();
        assert_relative_eq!(ratio, (-0.135_f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn zero_action_paths_predict_ratio_one() {
        // the equilibrium flow and the constant path at the fixed point agree
        let sys = Harmonic::new(1);
        let field = IdentityField::new(1);
        let origin = PhasePoint::from_slice(&[0.0, 0.0]).unwrap();
        let flow = deterministic_flow(&sys, &origin, 1.0, 64).unwrap();
        let constant = DiscretePath::constant(&origin, 1.0, 64).unwrap();
        assert_eq!(
            om_ratio_prediction(&sys, &field, &flow, &constant).unwrap(),
            1.0
        );
    }

    #[test]
    fn measured_ratio_of_zero_action_tubes_is_one_with_common_noise() {
        // two constant references for pure noise: identical deviation law,
        // identical streams, hence identical hit sets
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        let a = PhasePoint::from_slice(&[0.4, 0.0]).unwrap();
        let b = PhasePoint::from_slice(&[-0.2, 0.7]).unwrap();
        let tube_a = TubeSpec::new(DiscretePath::constant(&a, 1.0, 200).unwrap(), 1.0).unwrap();
        let tube_b = TubeSpec::new(DiscretePath::constant(&b, 1.0, 200).unwrap(), 1.0).unwrap();
        let cfg = NoiseConfig::new(1.0, 31, 2_000).unwrap();
        let pa = tube_probability_mc(&sys, &field, &tube_a, &cfg, &SdeOptions::default()).unwrap();
        let pb = tube_probability_mc(&sys, &field, &tube_b, &cfg, &SdeOptions::default()).unwrap();
        assert_eq!(pa.hits, pb.hits);
    }

    #[test]
    fn ldp_curve_matches_small_ball_reduction_for_pure_noise() {
        // gamma^2 log p = gamma^2 * 2 log small_ball(eps/gamma, T) within 3 se
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        // the node-only membership check inflates the probability by a
        // boundary-crossing bias of order sqrt(dt); the grid must be fine
        // enough to push that below the band
        let tube = zero_system_tube(1.0, 40_000);
        let gammas = [1.0, 0.7];
        let curve = ldp_curve(
            &sys,
            &field,
            &tube,
            &gammas,
            10_000,
            9,
            &SdeOptions::default(),
        )
        .unwrap();
        assert_eq!(curve.rate_reference, 0.0);
        for p in &curve.points {
            assert!(p.usable);
            let series = small_ball_oracle(1.0 / p.gamma, 1.0, 16).unwrap();
            let expect = p.gamma * p.gamma * 2.0 * series.ln();
            let got = p.scaled_log_p.unwrap();
            let band = 3.0 * p.scaled_log_se.unwrap();
            assert!(
                (got - expect).abs() <= band,
                "gamma {}: {} vs {} (band {})",
                p.gamma,
                got,
                expect,
                band
            );
        }
    }

    #[test]
    fn zero_rate_tube_curve_rises_toward_zero() {
        // around a flow path the rate vanishes: the scaled log-probabilities
        // are negative and climb toward 0 as the noise weakens
        let sys = Harmonic::new(1);
        let field = IdentityField::new(1);
        let x0 = PhasePoint::from_slice(&[0.7, 0.0]).unwrap();
        let flow = deterministic_flow(&sys, &x0, 1.0, 400).unwrap();
        let tube = TubeSpec::new(flow, 0.8).unwrap();
        let curve = ldp_curve(
            &sys,
            &field,
            &tube,
            &[1.0, 0.5],
            5_000,
            17,
            &SdeOptions::default(),
        )
        .unwrap();
        // zero-cost up to the scheme error of the discrete flow
        assert!(curve.rate_reference.abs() <= 1e-6);
        let values: Vec<f64> = curve
            .points
            .iter()
            .map(|p| p.scaled_log_p.unwrap())
            .collect();
        assert!(values.iter().all(|&v| v < 0.0), "{values:?}");
        assert!(values[1] > values[0], "{values:?}");
    }

    #[test]
    fn hopeless_curves_error_out() {
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        let tube = zero_system_tube(0.05, 100);
        let err = ldp_curve(&sys, &field, &tube, &[1.0], 200, 3, &SdeOptions::default());
        assert!(matches!(err, Err(Error::EmptyCurve(_))));
    }

    #[test]
    fn gamma_lists_must_descend() {
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        let tube = zero_system_tube(1.0, 100);
        let err = ldp_curve(
            &sys,
            &field,
            &tube,
            &[0.5, 1.0],
            200,
            3,
            &SdeOptions::default(),
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn tiny_replicate_counts_are_rejected() {
        let sys = Zero::new(1);
        let field = IdentityField::new(1);
        let tube = zero_system_tube(1.0, 100);
        let cfg = NoiseConfig::new(1.0, 1, 99).unwrap();
        assert!(matches!(
            tube_probability_mc(&sys, &field, &tube, &cfg, &SdeOptions::default()),
            Err(Error::Contract(_))
        ));
    }
}
