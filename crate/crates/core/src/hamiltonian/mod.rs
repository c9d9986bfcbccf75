//! Hamiltonian systems and their deterministic dynamics.
//!
//! The central contract is the [`Hamiltonian`] trait: an energy function on
//! phase space with its gradient and Hessian. Library systems supply analytic
//! derivatives; anything that only defines `energy` inherits central
//! finite-difference fallbacks (step 1e-5). Deterministic evolution
//! `dx = J grad H dt` lives in [`flow`], and the per-oscillator action-angle
//! chart in [`action_angle`].

mod action_angle;
mod flow;
pub mod systems;

pub use action_angle::{from_action_angle, to_action_angle};
pub use flow::{deterministic_flow, deterministic_flow_with, FlowOptions, FlowScheme};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fd;
use crate::phase::apply_j_into;

/// An autonomous Hamiltonian on 2n-dimensional phase space `(q, p)`.
pub trait Hamiltonian: Send + Sync {
    /// Degrees of freedom n.
    fn dof(&self) -> usize;

    fn dim(&self) -> usize {
        2 * self.dof()
    }

    /// Total energy H(x).
    fn energy(&self, x: &DVector<f64>) -> f64;

    /// Gradient of H. The default is a central finite difference of
    /// [`Hamiltonian::energy`]; library systems override it analytically.
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        fd::central_gradient(|y| self.energy(y), x, fd::DEFAULT_STEP)
    }

    /// Allocation-free gradient for integrator hot loops.
    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(&self.gradient(x));
    }

    /// Hessian of H. The default differentiates the gradient centrally and
    /// symmetrizes, so the symmetry invariant holds exactly.
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let j = fd::central_jacobian(|y| self.gradient(y), x, fd::DEFAULT_STEP);
        let jt = j.transpose();
        (j + jt) * 0.5
    }

    /// Declares the splitting H = T(p) + V(q), which lets the flow use the
    /// Störmer-Verlet scheme.
    fn separable(&self) -> bool {
        false
    }

    /// Lipschitz constant of the gradient, when known.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for &H {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn energy(&self, x: &DVector<f64>) -> f64 {
        (**self).energy(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(x)
    }
    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        (**self).gradient_into(x, out)
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).hessian(x)
    }
    fn separable(&self) -> bool {
        (**self).separable()
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        (**self).lipschitz_bound()
    }
}

/// A Hamiltonian that splits into an integrable part depending only on the
/// actions plus a perturbation, `H = H0(I) + P(theta, I)`.
pub trait NearlyIntegrable: Hamiltonian {
    fn h0(&self, action: &DVector<f64>) -> f64;

    /// Unperturbed frequency map `omega(I) = grad H0(I)`.
    fn h0_gradient(&self, action: &DVector<f64>) -> DVector<f64>;

    fn perturbation(&self, theta: &DVector<f64>, action: &DVector<f64>) -> f64;

    fn perturbation_theta_gradient(
        &self,
        theta: &DVector<f64>,
        action: &DVector<f64>,
    ) -> DVector<f64>;

    fn perturbation_action_gradient(
        &self,
        theta: &DVector<f64>,
        action: &DVector<f64>,
    ) -> DVector<f64>;

    /// Size proxy for the perturbation (its C^l norm up to a constant).
    fn eta(&self) -> f64;

    /// The same family with the perturbation rescaled to amplitude `eta`.
    fn at_eta(&self, eta: f64) -> Box<dyn NearlyIntegrable>;

    /// True when P does not depend on I, making the action-angle form
    /// separable.
    fn perturbation_action_independent(&self) -> bool {
        false
    }
}

/// The symplectic gradient `J grad H(x)`, i.e. the right-hand side of
/// Hamilton's equations. Equals `(dH/dp, -dH/dq)` under the crate's sign
/// convention.
pub fn symplectic_gradient(sys: &dyn Hamiltonian, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != sys.dim() {
        return Err(Error::contract(format!(
            "state has dimension {}, system expects {}",
            x.len(),
            sys.dim()
        )));
    }
    let grad = sys.gradient(x);
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            point: x.iter().copied().collect(),
        });
    }
    let mut out = DVector::zeros(x.len());
    apply_j_into(&grad, &mut out);
    Ok(out)
}

/// Hot-loop variant: writes `J grad H(x)` into `out` using `grad_buf` as
/// scratch, no allocation and no checks.
pub(crate) fn symplectic_gradient_into(
    sys: &dyn Hamiltonian,
    x: &DVector<f64>,
    grad_buf: &mut DVector<f64>,
    out: &mut DVector<f64>,
) {
    sys.gradient_into(x, grad_buf);
    apply_j_into(grad_buf, out);
}
