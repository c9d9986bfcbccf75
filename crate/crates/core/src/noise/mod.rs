//! Diffusion coefficients and the structure conditions on them.
//!
//! A [`DiffusionField`] is a symmetric matrix field `sigma(x)` with its
//! derivative tensor and declared two-sided spectral bounds
//! `lambda <= spec(sigma^2) <= Lambda`. The submodules provide the library
//! fixtures and decidable sampling checks for uniform ellipticity, the
//! Frobenius bracket condition (sufficient for the coordinate-chart
//! condition), and the Hamiltonian-column condition, together with the
//! Stratonovich-to-Itô drift correction and the divergence vector entering the
//! action functional.

pub mod checks;
mod fields;

pub use checks::{
    check_chart_witness, check_ellipticity, check_frobenius, check_hamiltonian_columns, Condition,
    ConditionReport, Verdict, DEFAULT_CONDITION_SAMPLES,
};
pub use fields::{ConstantField, IdentityField, QuadraticDiagField, SqrtDiagField};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fd;
use crate::phase::DomainBox;

/// Gradient of a scalar witness Hamiltonian for one column of sigma.
pub type WitnessGradient = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A local chart `U` with `sigma(U(y)) = DU(y)`, the direct witness for the
/// coordinate-change condition.
pub struct ChartWitness {
    pub map: Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>,
    pub jacobian: Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
    /// Box in chart coordinates `y` over which the witness claims validity.
    pub domain: DomainBox,
}

/// A symmetric, uniformly elliptic matrix-valued diffusion coefficient.
pub trait DiffusionField: Send + Sync {
    fn dof(&self) -> usize;

    fn dim(&self) -> usize {
        2 * self.dof()
    }

    /// The matrix sigma(x); must be symmetric.
    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Allocation-free variant for integrator hot loops.
    fn sigma_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&self.sigma(x));
    }

    /// Derivative tensor as the list over k of `d sigma / d x_k`. The default
    /// is a central finite difference of [`DiffusionField::sigma`].
    fn sigma_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim);
        let mut xp = x.clone();
        for k in 0..dim {
            xp[k] = x[k] + fd::DEFAULT_STEP;
            let sp = self.sigma(&xp);
            xp[k] = x[k] - fd::DEFAULT_STEP;
            let sm = self.sigma(&xp);
            xp[k] = x[k];
            out.push((sp - sm) / (2.0 * fd::DEFAULT_STEP));
        }
        out
    }

    /// Declared uniform ellipticity constants `(lambda, Lambda)` bounding the
    /// spectrum of sigma(x)^2 on the field's validity region.
    fn ellipticity(&self) -> (f64, f64);

    /// Jacobian of the divergence vector, entry (j, l) = d (div sigma)_j / d x_l.
    /// Needed for exact action gradients; the default differentiates the
    /// divergence centrally.
    fn divergence_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        fd::central_jacobian(
            |y| {
                let derivs = self.sigma_derivative(y);
                divergence_from_derivs(&derivs)
            },
            x,
            fd::DEFAULT_STEP,
        )
    }

    /// Gradients of witness Hamiltonians for the columns, when known.
    fn column_hamiltonian_gradients(&self) -> Option<&[WitnessGradient]> {
        None
    }

    /// Direct witness for the coordinate-change condition, when known.
    fn chart_witness(&self) -> Option<&ChartWitness> {
        None
    }

    /// Writes the Itô drift correction `1/2 sum_i (sigma_i . grad) sigma_i`
    /// into `out`. Fixtures override this with closed forms; the default
    /// assembles it from [`Self::sigma_derivative`].
    fn ito_correction_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let s = self.sigma(x);
        let derivs = self.sigma_derivative(x);
        ito_from_derivs(&s, &derivs, out);
    }
}

impl<F: DiffusionField + ?Sized> DiffusionField for &F {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).sigma(x)
    }
    fn sigma_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        (**self).sigma_into(x, out)
    }
    fn sigma_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (**self).sigma_derivative(x)
    }
    fn ellipticity(&self) -> (f64, f64) {
        (**self).ellipticity()
    }
    fn divergence_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).divergence_jacobian(x)
    }
    fn column_hamiltonian_gradients(&self) -> Option<&[WitnessGradient]> {
        (**self).column_hamiltonian_gradients()
    }
    fn chart_witness(&self) -> Option<&ChartWitness> {
        (**self).chart_witness()
    }
    fn ito_correction_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        (**self).ito_correction_into(x, out)
    }
}

/// Inverse of sigma(x) through its spectral decomposition, which keeps the
/// result symmetric. Fails when the condition estimate exceeds what the
/// declared ellipticity constants allow.
pub fn sigma_inverse(field: &dyn DiffusionField, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let s = field.sigma(x);
    sigma_inverse_of(&s, field.ellipticity(), x)
}

pub(crate) fn sigma_inverse_of(
    s: &DMatrix<f64>,
    (lambda, big_lambda): (f64, f64),
    at: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let eigen = s.clone().symmetric_eigen();
    let max_abs = eigen
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &e| a.max(e.abs()));
    let min_abs = eigen
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &e| a.min(e.abs()));
    let cond = max_abs / min_abs;
    let limit = (big_lambda / lambda).sqrt() * (1.0 + 1e-6);
    if !cond.is_finite() || cond > limit {
        return Err(Error::NearSingular {
            cond,
            limit,
            point: at.iter().copied().collect(),
            node: None,
        });
    }
    let mut inv_eigen = eigen.clone();
    inv_eigen.eigenvalues.apply(|e| *e = 1.0 / *e);
    let inv = inv_eigen.recompose();
    let residual = (s * &inv - DMatrix::<f64>::identity(s.nrows(), s.ncols())).norm();
    if residual > 1e-10 {
        return Err(Error::NearSingular {
            cond,
            limit,
            point: at.iter().copied().collect(),
            node: None,
        });
    }
    Ok(inv)
}

/// The divergence vector: entry j is `sum_i d sigma_ij / d x_i`. Rows and
/// columns agree by symmetry, and under the Hamiltonian-column condition this
/// vanishes identically.
pub fn divergence_sigma(field: &dyn DiffusionField, x: &DVector<f64>) -> DVector<f64> {
    let derivs = field.sigma_derivative(x);
    divergence_from_derivs(&derivs)
}

pub(crate) fn divergence_from_derivs(derivs: &[DMatrix<f64>]) -> DVector<f64> {
    let dim = derivs.len();
    DVector::from_iterator(
        dim,
        (0..dim).map(|j| (0..dim).map(|i| derivs[i][(i, j)]).sum()),
    )
}

/// The Stratonovich-to-Itô drift correction `1/2 sum_i D sigma_i(x) sigma_i(x)`
/// summed over all 2n columns.
pub fn ito_drift_correction(field: &dyn DiffusionField, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(field.dim());
    field.ito_correction_into(x, &mut out);
    out
}

pub(crate) fn ito_from_derivs(s: &DMatrix<f64>, derivs: &[DMatrix<f64>], out: &mut DVector<f64>) {
    let dim = derivs.len();
    out.fill(0.0);
    for i in 0..dim {
        for r in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                // (D sigma_i)_{r,k} = d sigma_{r,i} / d x_k
                acc += derivs[k][(r, i)] * s[(k, i)];
            }
            out[r] += 0.5 * acc;
        }
    }
}

/// Lie bracket of two column fields, `[V_j, V_k] = DV_k V_j - DV_j V_k`.
pub fn lie_bracket(
    field: &dyn DiffusionField,
    x: &DVector<f64>,
    j: usize,
    k: usize,
) -> DVector<f64> {
    let s = field.sigma(x);
    let derivs = field.sigma_derivative(x);
    lie_bracket_from(&s, &derivs, j, k)
}

pub(crate) fn lie_bracket_from(
    s: &DMatrix<f64>,
    derivs: &[DMatrix<f64>],
    j: usize,
    k: usize,
) -> DVector<f64> {
    let dim = derivs.len();
    DVector::from_iterator(
        dim,
        (0..dim).map(|r| {
            (0..dim)
                .map(|l| derivs[l][(r, k)] * s[(l, j)] - derivs[l][(r, j)] * s[(l, k)])
                .sum()
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_inverse_is_identity() {
        let f = IdentityField::new(1);
        let x = DVector::from_column_slice(&[0.3, -0.4]);
        let inv = sigma_inverse(&f, &x).unwrap();
        assert_eq!(inv, DMatrix::identity(2, 2));
    }

    #[test]
    fn constant_diag_inverts_entrywise() {
        let f = ConstantField::diagonal(&[2.0, 0.5]).unwrap();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let inv = sigma_inverse(&f, &x).unwrap();
        assert_relative_eq!(inv[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(inv[(1, 1)], 2.0, epsilon = 1e-14);
        assert_eq!(inv[(0, 1)], 0.0);
    }

    #[test]
    fn random_spd_inverse_passes_residual_oracle() {
        // residual oracle: ||sigma sigma^{-1} - I|| <= 1e-10
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let spd = &a * a.transpose() + DMatrix::identity(4, 4) * 2.0;
            let eig = spd.clone().symmetric_eigen();
            let lam = eig.eigenvalues.min();
            let big = eig.eigenvalues.max();
            let f = ConstantField::new(spd.clone(), (lam * lam * 0.99, big * big * 1.01)).unwrap();
            let x = DVector::zeros(4);
            let inv = sigma_inverse(&f, &x).unwrap();
            let residual = (&spd * &inv - DMatrix::<f64>::identity(4, 4)).norm();
            assert!(residual <= 1e-10, "residual {residual}");
            assert!((inv.clone() - inv.transpose()).norm() < 1e-10);
        }
    }

    #[test]
    fn near_singular_matrix_is_reported() {
        let f = ConstantField::diagonal(&[1.0, 1e-9]).unwrap();
        // declared ellipticity comes from the diagonal, so the condition
        // limit is generous; shrink it by lying about lambda
        struct Tight(ConstantField);
        impl DiffusionField for Tight {
            fn dof(&self) -> usize {
                self.0.dof()
            }
            fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
                self.0.sigma(x)
            }
            fn ellipticity(&self) -> (f64, f64) {
                (0.9, 1.1)
            }
        }
        let x = DVector::zeros(2);
        assert!(matches!(
            sigma_inverse(&Tight(f), &x),
            Err(Error::NearSingular { .. })
        ));
    }

    #[test]
    fn divergence_of_constant_field_vanishes() {
        let f = ConstantField::diagonal(&[2.0, 3.0]).unwrap();
        let x = DVector::from_column_slice(&[0.7, -0.2]);
        assert_eq!(divergence_sigma(&f, &x), DVector::zeros(2));
        assert_eq!(ito_drift_correction(&f, &x), DVector::zeros(2));
    }

    #[test]
    fn quadratic_diag_is_divergence_free_everywhere() {
        let f = QuadraticDiagField::new();
        for point in [[0.0, 0.0], [1.0, 1.0], [-0.3, 1.7], [0.9, -0.9]] {
            let x = DVector::from_column_slice(&point);
            let div = divergence_sigma(&f, &x);
            assert!(div.norm() < 1e-12, "div {div:?} at {point:?}");
        }
    }

    #[test]
    fn sqrt_diag_divergence_matches_hand_computation() {
        // d/dq sqrt(1+q^2) = q / sqrt(1+q^2); at (1,1) both entries 1/sqrt(2)
        let f = SqrtDiagField::new();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let div = divergence_sigma(&f, &x);
        let expect = 1.0 / 2.0_f64.sqrt();
        assert_relative_eq!(div[0], expect, epsilon = 1e-12);
        assert_relative_eq!(div[1], expect, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_diag_ito_correction_is_half_x() {
        let f = SqrtDiagField::new();
        let x = DVector::from_column_slice(&[1.0, 2.0]);
        let corr = ito_drift_correction(&f, &x);
        assert_relative_eq!(corr[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(corr[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ito_correction_matches_finite_difference_oracle() {
        // independent oracle: 1/2 sum_i (sigma(x + h sigma_i) - sigma(x - h sigma_i)) e_i / 2h
        let fields: [&dyn DiffusionField; 2] = [&SqrtDiagField::new(), &QuadraticDiagField::new()];
        for f in fields {
            let x = DVector::from_column_slice(&[0.8, -0.6]);
            let s = f.sigma(&x);
            let h = 1e-6;
            let mut oracle = DVector::zeros(2);
            for i in 0..2 {
                let col = s.column(i).clone_owned();
                let xp = &x + &col * h;
                let xm = &x - &col * h;
                let ds = (f.sigma(&xp) - f.sigma(&xm)) / (2.0 * h);
                oracle += 0.5 * ds.column(i).clone_owned();
            }
            let got = ito_drift_correction(f, &x);
            for r in 0..2 {
                assert_relative_eq!(got[r], oracle[r], epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn quadratic_diag_bracket_at_unit_point() {
        // [V1, V2] = DV2 V1 - DV1 V2 = (-0.22, 0.22) at (1, 1)
        let f = QuadraticDiagField::new();
        let x = DVector::from_column_slice(&[1.0, 1.0]);
        let b = lie_bracket(&f, &x, 0, 1);
        assert_relative_eq!(b[0], -0.22, epsilon = 1e-12);
        assert_relative_eq!(b[1], 0.22, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_diag_brackets_vanish() {
        // each column depends only on its own coordinate through its own slot
        let f = SqrtDiagField::new();
        let x = DVector::from_column_slice(&[0.4, -1.2]);
        assert!(lie_bracket(&f, &x, 0, 1).norm() < 1e-12);
    }

    #[test]
    fn default_derivative_tensor_matches_analytic_override() {
        let f = QuadraticDiagField::new();
        struct EnergyOnly;
        impl DiffusionField for EnergyOnly {
            fn dof(&self) -> usize {
                1
            }
            fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
                QuadraticDiagField::new().sigma(x)
            }
            fn ellipticity(&self) -> (f64, f64) {
                (1.0, 1.96)
            }
        }
        let x = DVector::from_column_slice(&[0.3, 0.7]);
        let analytic = f.sigma_derivative(&x);
        let fd = EnergyOnly.sigma_derivative(&x);
        for k in 0..2 {
            assert!((&analytic[k] - &fd[k]).norm() < 1e-9);
        }
    }
}
