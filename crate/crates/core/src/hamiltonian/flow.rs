//! Symplectic integration of `dx = J grad H(x) dt`.
//!
//! Scheme selection: Störmer-Verlet when the system declares itself separable,
//! implicit midpoint (fixed point, tolerance 1e-12, at most 50 sweeps)
//! otherwise. Both are second order and preserve the symplectic structure
//! underlying the torus-persistence diagnostics.

use nalgebra::DVector;

use super::{symplectic_gradient_into, Hamiltonian};
use crate::error::{Error, Result};
use crate::path::DiscretePath;
use crate::phase::PhasePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowScheme {
    /// Störmer-Verlet for separable systems, implicit midpoint otherwise.
    Auto,
    StormerVerlet,
    ImplicitMidpoint,
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub scheme: FlowScheme,
    /// Stability threshold on dt = T/N.
    pub dt_max: f64,
    pub midpoint_tol: f64,
    pub midpoint_max_iter: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            scheme: FlowScheme::Auto,
            dt_max: 0.25,
            midpoint_tol: 1e-12,
            midpoint_max_iter: 50,
        }
    }
}

/// Integrates the deterministic flow with default options.
pub fn deterministic_flow(
    sys: &dyn Hamiltonian,
    x0: &PhasePoint,
    t_max: f64,
    n_steps: usize,
) -> Result<DiscretePath> {
    deterministic_flow_with(sys, x0, t_max, n_steps, &FlowOptions::default())
}

pub fn deterministic_flow_with(
    sys: &dyn Hamiltonian,
    x0: &PhasePoint,
    t_max: f64,
    n_steps: usize,
    opts: &FlowOptions,
) -> Result<DiscretePath> {
    if n_steps < 2 {
        return Err(Error::contract("flow needs at least two steps"));
    }
    if x0.dim() != sys.dim() {
        return Err(Error::contract(format!(
            "initial point has dimension {}, system expects {}",
            x0.dim(),
            sys.dim()
        )));
    }
    if !(t_max > 0.0) {
        return Err(Error::contract("horizon must be positive"));
    }
    let dt = t_max / n_steps as f64;
    if dt > opts.dt_max {
        return Err(Error::contract(format!(
            "dt = {dt:.3e} above stability threshold {:.3e}; raise N or the threshold",
            opts.dt_max
        )));
    }
    let use_verlet = match opts.scheme {
        FlowScheme::Auto => sys.separable(),
        FlowScheme::StormerVerlet => true,
        FlowScheme::ImplicitMidpoint => false,
    };

    let dim = sys.dim();
    let mut values = Vec::with_capacity(n_steps + 1);
    values.push(x0.coords().clone());
    let mut x = x0.coords().clone();
    let mut stepper = Stepper::new(dim);
    for step in 0..n_steps {
        if use_verlet {
            stepper.verlet(sys, &mut x, dt);
        } else {
            stepper.midpoint(sys, &mut x, dt, opts, step)?;
        }
        if !x.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite {
                what: "flow state",
                point: x.iter().copied().collect(),
            });
        }
        values.push(x.clone());
    }
    DiscretePath::new(t_max, values)
}

/// Scratch buffers reused across steps.
struct Stepper {
    grad: DVector<f64>,
    vel: DVector<f64>,
    mid: DVector<f64>,
    next: DVector<f64>,
}

impl Stepper {
    fn new(dim: usize) -> Self {
        Stepper {
            grad: DVector::zeros(dim),
            vel: DVector::zeros(dim),
            mid: DVector::zeros(dim),
            next: DVector::zeros(dim),
        }
    }

    /// Leapfrog for H = T(p) + V(q): half-kick, drift, half-kick.
    fn verlet(&mut self, sys: &dyn Hamiltonian, x: &mut DVector<f64>, dt: f64) {
        let n = x.len() / 2;
        sys.gradient_into(x, &mut self.grad);
        for i in 0..n {
            x[n + i] -= 0.5 * dt * self.grad[i];
        }
        sys.gradient_into(x, &mut self.grad);
        for i in 0..n {
            x[i] += dt * self.grad[n + i];
        }
        sys.gradient_into(x, &mut self.grad);
        for i in 0..n {
            x[n + i] -= 0.5 * dt * self.grad[i];
        }
    }

    fn midpoint(
        &mut self,
        sys: &dyn Hamiltonian,
        x: &mut DVector<f64>,
        dt: f64,
        opts: &FlowOptions,
        step: usize,
    ) -> Result<()> {
        // x' = x + dt J grad H((x + x')/2), solved by fixed-point iteration
        self.next.copy_from(x);
        symplectic_gradient_into(sys, x, &mut self.grad, &mut self.vel);
        self.next.axpy(dt, &self.vel, 1.0);
        let mut residual = f64::INFINITY;
        for _ in 0..opts.midpoint_max_iter {
            self.mid.copy_from(x);
            self.mid.axpy(0.5, &self.next, 0.5);
            symplectic_gradient_into(sys, &self.mid, &mut self.grad, &mut self.vel);
            residual = 0.0;
            for i in 0..x.len() {
                let updated = x[i] + dt * self.vel[i];
                residual = residual.max((updated - self.next[i]).abs());
                self.next[i] = updated;
            }
            if residual <= opts.midpoint_tol {
                x.copy_from(&self.next);
                return Ok(());
            }
        }
        Err(Error::IntegrationFailure {
            step,
            iterations: opts.midpoint_max_iter,
            residual,
        })
    }
}
