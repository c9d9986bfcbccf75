//! Strong numerical solutions of the Stratonovich system
//! `dX = J grad H(X) dt + gamma sigma(X) ∘ dW`.
//!
//! The default scheme is Euler-Maruyama on the equivalent Itô form, whose
//! extra drift `gamma^2/2 sum_i (sigma_i . grad) sigma_i` is the separately
//! tested correction from the noise module; a Heun predictor-corrector on the
//! Stratonovich form is available as a cross-check. Noise streams are
//! counter-based: replicate j draws from stream j of a ChaCha generator, so
//! ensembles reproduce bit-exactly under any parallel schedule.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{symplectic_gradient_into, Hamiltonian};
use crate::noise::DiffusionField;
use crate::path::DiscretePath;
use crate::phase::{DomainBox, PhasePoint};

/// Increments of a Brownian driver on a uniform grid, reproducible from
/// `(seed, stream_id)` alone.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    t_max: f64,
    increments: Vec<DVector<f64>>,
    seed: u64,
    stream_id: u64,
}

impl BrownianPath {
    /// Draws `n_steps` increments of a `dim`-dimensional Brownian motion on
    /// `[0, t_max]`. Identical `(seed, stream_id)` give identical arrays
    /// regardless of where or when they are drawn.
    pub fn sample(
        t_max: f64,
        n_steps: usize,
        dim: usize,
        seed: u64,
        stream_id: u64,
    ) -> Result<Self> {
        if n_steps < 1 || dim < 1 {
            return Err(Error::contract("need n_steps >= 1 and dim >= 1"));
        }
        if !(t_max > 0.0) {
            return Err(Error::contract("horizon must be positive"));
        }
        let sqrt_dt = (t_max / n_steps as f64).sqrt();
        let mut rng = stream_rng(seed, stream_id);
        let mut increments = Vec::with_capacity(n_steps);
        let mut buf = DVector::zeros(dim);
        for _ in 0..n_steps {
            fill_increment(&mut rng, sqrt_dt, &mut buf);
            increments.push(buf.clone());
        }
        Ok(BrownianPath {
            t_max,
            increments,
            seed,
            stream_id,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn dim(&self) -> usize {
        self.increments[0].len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    /// Sums consecutive increments, producing the same Brownian motion on a
    /// grid coarser by `factor`. This is how refinement studies share one
    /// noise realization across step sizes.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps() % factor != 0 {
            return Err(Error::contract(
                "coarsening factor must divide the step count",
            ));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|chunk| {
                let mut acc = chunk[0].clone();
                for dw in &chunk[1..] {
                    acc += dw;
                }
                acc
            })
            .collect();
        Ok(BrownianPath {
            t_max: self.t_max,
            increments,
            seed: self.seed,
            stream_id: self.stream_id,
        })
    }

    /// Node values `W(t_k)`, accumulated in increment order.
    pub fn cumulative(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        let mut acc = DVector::zeros(self.dim());
        out.push(acc.clone());
        for dw in &self.increments {
            acc += dw;
            out.push(acc.clone());
        }
        out
    }
}

pub(crate) fn stream_rng(seed: u64, stream_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub(crate) fn fill_increment(rng: &mut ChaCha12Rng, sqrt_dt: f64, out: &mut DVector<f64>) {
    for c in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *c = z * sqrt_dt;
    }
}

/// Noise intensity and ensemble bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise intensity gamma >= 0.
    pub gamma: f64,
    pub seed: u64,
    /// Replicate count M >= 1.
    pub replicates: u64,
}

impl NoiseConfig {
    pub fn new(gamma: f64, seed: u64, replicates: u64) -> Result<Self> {
        let cfg = NoiseConfig {
            gamma,
            seed,
            replicates,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::contract("gamma must be finite and nonnegative"));
        }
        if self.replicates < 1 {
            return Err(Error::contract("need at least one replicate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeScheme {
    /// Euler-Maruyama on the Itô form with the drift correction (default).
    ItoEulerMaruyama,
    /// Predictor-corrector on the Stratonovich form.
    StratonovichHeun,
}

#[derive(Debug, Clone)]
pub struct SdeOptions {
    pub scheme: SdeScheme,
    /// Stability threshold on dt = T/N.
    pub dt_max: f64,
    /// Bounded region the dynamics lives on; leaving it raises a domain-exit
    /// signal that callers classify (tube estimators count it as a miss).
    pub domain: Option<DomainBox>,
}

impl Default for SdeOptions {
    fn default() -> Self {
        SdeOptions {
            scheme: SdeScheme::ItoEulerMaruyama,
            dt_max: 0.25,
            domain: None,
        }
    }
}

/// Scratch buffers for one trajectory; reused across steps so stepping does
/// not allocate.
pub(crate) struct SdeStepper {
    grad: DVector<f64>,
    vel: DVector<f64>,
    vel2: DVector<f64>,
    corr: DVector<f64>,
    sig: DMatrix<f64>,
    sig2: DMatrix<f64>,
    noise: DVector<f64>,
    pred: DVector<f64>,
}

impl SdeStepper {
    pub(crate) fn new(dim: usize) -> Self {
        SdeStepper {
            grad: DVector::zeros(dim),
            vel: DVector::zeros(dim),
            vel2: DVector::zeros(dim),
            corr: DVector::zeros(dim),
            sig: DMatrix::zeros(dim, dim),
            sig2: DMatrix::zeros(dim, dim),
            noise: DVector::zeros(dim),
            pred: DVector::zeros(dim),
        }
    }

    pub(crate) fn step(
        &mut self,
        sys: &dyn Hamiltonian,
        field: &dyn DiffusionField,
        scheme: SdeScheme,
        x: &mut DVector<f64>,
        dw: &DVector<f64>,
        dt: f64,
        gamma: f64,
    ) {
        match scheme {
            SdeScheme::ItoEulerMaruyama => {
                // x += [J grad H(x) + gamma^2 corr(x)] dt + gamma sigma(x) dW,
                // every coefficient evaluated at the left node
                symplectic_gradient_into(sys, x, &mut self.grad, &mut self.vel);
                if gamma != 0.0 {
                    field.ito_correction_into(x, &mut self.corr);
                    field.sigma_into(x, &mut self.sig);
                    self.sig.mul_to(dw, &mut self.noise);
                }
                x.axpy(dt, &self.vel, 1.0);
                if gamma != 0.0 {
                    x.axpy(dt * gamma * gamma, &self.corr, 1.0);
                    x.axpy(gamma, &self.noise, 1.0);
                }
            }
            SdeScheme::StratonovichHeun => {
                symplectic_gradient_into(sys, x, &mut self.grad, &mut self.vel);
                self.pred.copy_from(x);
                self.pred.axpy(dt, &self.vel, 1.0);
                if gamma != 0.0 {
                    field.sigma_into(x, &mut self.sig);
                    self.sig.mul_to(dw, &mut self.noise);
                    self.pred.axpy(gamma, &self.noise, 1.0);
                }
                symplectic_gradient_into(sys, &self.pred, &mut self.grad, &mut self.vel2);
                x.axpy(0.5 * dt, &self.vel, 1.0);
                x.axpy(0.5 * dt, &self.vel2, 1.0);
                if gamma != 0.0 {
                    field.sigma_into(&self.pred, &mut self.sig2);
                    self.sig += &self.sig2;
                    self.sig.mul_to(dw, &mut self.noise);
                    x.axpy(0.5 * gamma, &self.noise, 1.0);
                }
            }
        }
    }
}

fn validate_setup(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    x0: &PhasePoint,
    dim: usize,
) -> Result<()> {
    if sys.dim() != dim || field.dim() != dim || x0.dim() != dim {
        return Err(Error::contract(format!(
            "dimension mismatch: system {}, field {}, x0 {}, driver {}",
            sys.dim(),
            field.dim(),
            x0.dim(),
            dim
        )));
    }
    Ok(())
}

/// Integrates one trajectory against the given Brownian driver.
pub fn integrate_stratonovich(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    x0: &PhasePoint,
    noise: &BrownianPath,
    gamma: f64,
) -> Result<DiscretePath> {
    integrate_stratonovich_with(sys, field, x0, noise, gamma, &SdeOptions::default())
}

pub fn integrate_stratonovich_with(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    x0: &PhasePoint,
    noise: &BrownianPath,
    gamma: f64,
    opts: &SdeOptions,
) -> Result<DiscretePath> {
    validate_setup(sys, field, x0, noise.dim())?;
    let dt = noise.t_max() / noise.n_steps() as f64;
    if dt > opts.dt_max {
        return Err(Error::contract(format!(
            "dt = {dt:.3e} above stability threshold {:.3e}",
            opts.dt_max
        )));
    }
    let mut x = x0.coords().clone();
    let mut stepper = SdeStepper::new(noise.dim());
    let mut values = Vec::with_capacity(noise.n_steps() + 1);
    values.push(x.clone());
    for (step, dw) in noise.increments().iter().enumerate() {
        stepper.step(sys, field, opts.scheme, &mut x, dw, dt, gamma);
        if !x.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite {
                what: "sde state",
                point: x.iter().copied().collect(),
            });
        }
        if let Some(domain) = &opts.domain {
            if !domain.contains(&x) {
                return Err(Error::DomainExit { step });
            }
        }
        values.push(x.clone());
    }
    DiscretePath::new(noise.t_max(), values)
}

/// One replicate of an ensemble, with domain exits tagged rather than fatal.
#[derive(Debug, Clone)]
pub enum TrajectoryOutcome {
    Complete(DiscretePath),
    DomainExit { exit_step: usize },
}

impl TrajectoryOutcome {
    pub fn path(&self) -> Option<&DiscretePath> {
        match self {
            TrajectoryOutcome::Complete(p) => Some(p),
            TrajectoryOutcome::DomainExit { .. } => None,
        }
    }
}

/// Runs `cfg.replicates` trajectories, replicate j driven by noise stream j.
/// The result is independent of evaluation order.
pub fn ensemble(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    x0: &PhasePoint,
    t_max: f64,
    n_steps: usize,
    cfg: &NoiseConfig,
    opts: &SdeOptions,
) -> Result<Vec<TrajectoryOutcome>> {
    cfg.validate()?;
    validate_setup(sys, field, x0, sys.dim())?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|j| {
            let noise = BrownianPath::sample(t_max, n_steps, sys.dim(), cfg.seed, j)?;
            match integrate_stratonovich_with(sys, field, x0, &noise, cfg.gamma, opts) {
                Ok(path) => Ok(TrajectoryOutcome::Complete(path)),
                Err(Error::DomainExit { step }) => {
                    Ok(TrajectoryOutcome::DomainExit { exit_step: step })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}
