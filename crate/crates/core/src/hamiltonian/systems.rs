//! Library systems, registered by name for the batch front-end.

use nalgebra::{DMatrix, DVector};

use super::{Hamiltonian, NearlyIntegrable};

/// n uncoupled unit-frequency oscillators, `H = sum (q_j^2 + p_j^2) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Harmonic {
    dof: usize,
}

impl Harmonic {
    pub fn new(dof: usize) -> Self {
        assert!(dof >= 1);
        Harmonic { dof }
    }
}

impl Hamiltonian for Harmonic {
    fn dof(&self) -> usize {
        self.dof
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.copy_from(x);
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }

    fn separable(&self) -> bool {
        true
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// The mathematical pendulum, `H = p^2/2 - cos q`.
#[derive(Debug, Clone, Copy)]
pub struct Pendulum;

impl Hamiltonian for Pendulum {
    fn dof(&self) -> usize {
        1
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * x[1] * x[1] - x[0].cos()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[x[0].sin(), x[1]])
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        out[0] = x[0].sin();
        out[1] = x[1];
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[x[0].cos(), 1.0]))
    }

    fn separable(&self) -> bool {
        true
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// The trivial Hamiltonian `H = 0`; its flow is the identity and the SDE it
/// drives is pure noise.
#[derive(Debug, Clone, Copy)]
pub struct Zero {
    dof: usize,
}

impl Zero {
    pub fn new(dof: usize) -> Self {
        assert!(dof >= 1);
        Zero { dof }
    }
}

impl Hamiltonian for Zero {
    fn dof(&self) -> usize {
        self.dof
    }

    fn energy(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }

    fn gradient_into(&self, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }

    fn separable(&self) -> bool {
        true
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// A user-supplied energy with finite-difference derivatives.
pub struct NumericHamiltonian<F> {
    dof: usize,
    energy: F,
    separable: bool,
}

impl<F: Fn(&DVector<f64>) -> f64 + Send + Sync> NumericHamiltonian<F> {
    pub fn new(dof: usize, energy: F) -> Self {
        NumericHamiltonian {
            dof,
            energy,
            separable: false,
        }
    }

    /// Declare H = T(p) + V(q); the caller is responsible for the claim.
    pub fn declare_separable(mut self) -> Self {
        self.separable = true;
        self
    }
}

impl<F: Fn(&DVector<f64>) -> f64 + Send + Sync> Hamiltonian for NumericHamiltonian<F> {
    fn dof(&self) -> usize {
        self.dof
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        (self.energy)(x)
    }

    fn separable(&self) -> bool {
        self.separable
    }
}

/// `-H`; flowing it forward integrates the original system backwards in time.
#[derive(Debug, Clone, Copy)]
pub struct Negated<S>(pub S);

impl<S: Hamiltonian> Hamiltonian for Negated<S> {
    fn dof(&self) -> usize {
        self.0.dof()
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        -self.0.energy(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.0.gradient(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        self.0.gradient_into(x, out);
        out.neg_mut();
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        -self.0.hessian(x)
    }

    fn separable(&self) -> bool {
        self.0.separable()
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.0.lipschitz_bound()
    }
}

/// Two-oscillator twist system `H0(I) = (I1^2 + I2^2)/2` perturbed by
/// `P = eta cos(theta1 + theta2)`, expressed in Cartesian coordinates via the
/// per-oscillator chart `I_j = (q_j^2 + p_j^2)/2`, `theta_j = atan2(p_j, q_j)`.
///
/// The Cartesian form is singular where an oscillator sits at its origin;
/// experiments on this system run at actions bounded away from zero.
#[derive(Debug, Clone, Copy)]
pub struct Twist2d {
    eta: f64,
}

impl Twist2d {
    pub fn new(eta: f64) -> Self {
        assert!(eta >= 0.0, "perturbation amplitude must be nonnegative");
        Twist2d { eta }
    }

    /// (I_j, theta_j, r2_j = q^2 + p^2) for both oscillators.
    fn chart(x: &DVector<f64>) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let mut action = [0.0; 2];
        let mut theta = [0.0; 2];
        let mut r2 = [0.0; 2];
        for j in 0..2 {
            let (q, p) = (x[j], x[2 + j]);
            r2[j] = q * q + p * p;
            action[j] = 0.5 * r2[j];
            theta[j] = p.atan2(q);
        }
        (action, theta, r2)
    }
}

impl Hamiltonian for Twist2d {
    fn dof(&self) -> usize {
        2
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        let (action, theta, _) = Self::chart(x);
        0.5 * (action[0] * action[0] + action[1] * action[1])
            + self.eta * (theta[0] + theta[1]).cos()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(4);
        self.gradient_into(x, &mut out);
        out
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let (action, theta, r2) = Self::chart(x);
        let s = theta[0] + theta[1];
        let dp_ds = -self.eta * s.sin();
        for j in 0..2 {
            let (q, p) = (x[j], x[2 + j]);
            // dH/dq = H0_I q + P'(s) dtheta/dq, with dtheta/dq = -p / r2
            out[j] = action[j] * q + dp_ds * (-p / r2[j]);
            out[2 + j] = action[j] * p + dp_ds * (q / r2[j]);
        }
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (action, theta, r2) = Self::chart(x);
        let s = theta[0] + theta[1];
        let dp_ds = -self.eta * s.sin();
        let d2p_ds2 = -self.eta * s.cos();

        let mut grad_s = DVector::zeros(4);
        let mut hess = DMatrix::zeros(4, 4);
        for j in 0..2 {
            let (q, p) = (x[j], x[2 + j]);
            let (iq, ip) = (j, 2 + j); // slot indices of this oscillator

            grad_s[iq] = -p / r2[j];
            grad_s[ip] = q / r2[j];

            // H0 part: grad I_j grad I_j^T + I_j * identity on the block
            hess[(iq, iq)] += q * q + action[j];
            hess[(iq, ip)] += q * p;
            hess[(ip, iq)] += q * p;
            hess[(ip, ip)] += p * p + action[j];

            // P'(s) * second derivatives of theta_j
            let r4 = r2[j] * r2[j];
            hess[(iq, iq)] += dp_ds * (2.0 * p * q / r4);
            hess[(iq, ip)] += dp_ds * ((p * p - q * q) / r4);
            hess[(ip, iq)] += dp_ds * ((p * p - q * q) / r4);
            hess[(ip, ip)] += dp_ds * (-2.0 * q * p / r4);
        }
        // P''(s) * grad s grad s^T; the pair product first keeps the
        // matrix bitwise symmetric
        for a in 0..4 {
            for b in 0..4 {
                hess[(a, b)] += d2p_ds2 * (grad_s[a] * grad_s[b]);
            }
        }
        hess
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }
}

impl NearlyIntegrable for Twist2d {
    fn h0(&self, action: &DVector<f64>) -> f64 {
        0.5 * action.norm_squared()
    }

    fn h0_gradient(&self, action: &DVector<f64>) -> DVector<f64> {
        action.clone()
    }

    fn perturbation(&self, theta: &DVector<f64>, _action: &DVector<f64>) -> f64 {
        self.eta * (theta[0] + theta[1]).cos()
    }

    fn perturbation_theta_gradient(
        &self,
        theta: &DVector<f64>,
        _action: &DVector<f64>,
    ) -> DVector<f64> {
        let d = -self.eta * (theta[0] + theta[1]).sin();
        DVector::from_column_slice(&[d, d])
    }

    fn perturbation_action_gradient(
        &self,
        _theta: &DVector<f64>,
        _action: &DVector<f64>,
    ) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn eta(&self) -> f64 {
        self.eta
    }

    fn at_eta(&self, eta: f64) -> Box<dyn NearlyIntegrable> {
        Box::new(Twist2d::new(eta))
    }

    fn perturbation_action_independent(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{from_action_angle, to_action_angle};
    use approx::assert_relative_eq;

    fn fd_gradient(sys: &dyn Hamiltonian, x: &DVector<f64>) -> DVector<f64> {
        let h = 1e-5;
        let mut g = DVector::zeros(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            g[i] = (sys.energy(&xp) - sys.energy(&xm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn twist_gradient_matches_finite_differences() {
        let sys = Twist2d::new(0.05);
        let x = DVector::from_column_slice(&[0.9, -0.4, 0.3, 1.1]);
        let g = sys.gradient(&x);
        let fd = fd_gradient(&sys, &x);
        for i in 0..4 {
            assert_relative_eq!(g[i], fd[i], max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn twist_hessian_matches_finite_differences_of_gradient() {
        let sys = Twist2d::new(0.05);
        let x = DVector::from_column_slice(&[0.9, -0.4, 0.3, 1.1]);
        let hess = sys.hessian(&x);
        let h = 1e-5;
        for k in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (sys.gradient(&xp) - sys.gradient(&xm)) / (2.0 * h);
            for i in 0..4 {
                assert_relative_eq!(hess[(i, k)], col[i], max_relative = 1e-5, epsilon = 1e-8);
            }
        }
        // exact symmetry
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(hess[(a, b)], hess[(b, a)]);
            }
        }
    }

    #[test]
    fn twist_energy_decomposes_through_the_chart() {
        // energy(x) = h0(I(x)) + P(theta(x), I(x)) to 1e-10
        let sys = Twist2d::new(0.02);
        let x = crate::phase::PhasePoint::from_slice(&[0.8, -0.5, 0.2, 0.9]).unwrap();
        let (theta, action) = to_action_angle(&x).unwrap();
        let split = sys.h0(&action) + sys.perturbation(&theta, &action);
        assert!((sys.energy(x.coords()) - split).abs() < 1e-10);
    }

    #[test]
    fn twist_round_trips_through_action_angle() {
        let theta = DVector::from_column_slice(&[0.3, -2.0]);
        let action = DVector::from_column_slice(&[0.3, 0.485]);
        let x = from_action_angle(&theta, &action).unwrap();
        let (theta2, action2) = to_action_angle(&x).unwrap();
        for j in 0..2 {
            assert_relative_eq!(theta[j], theta2[j], epsilon = 1e-12);
            assert_relative_eq!(action[j], action2[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn negated_flips_energy_and_gradient() {
        let sys = Negated(Pendulum);
        let x = DVector::from_column_slice(&[0.5, -0.2]);
        assert_eq!(sys.energy(&x), -Pendulum.energy(&x));
        assert_eq!(sys.gradient(&x), -Pendulum.gradient(&x));
    }
}
