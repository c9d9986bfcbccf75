//! Library diffusion fields.
//!
//! Three of these are the standing fixtures of the test suite:
//! the identity, `diag(1 + 0.1 p^2, 1 + 0.1 q^2)` whose columns are
//! Hamiltonian vector fields, and `diag(sqrt(1+q^2), sqrt(1+p^2))` whose
//! columns commute but are not divergence-free.

use nalgebra::{DMatrix, DVector};

use super::{ChartWitness, DiffusionField, WitnessGradient};
use crate::error::{Error, Result};
use crate::phase::{apply_neg_j, DomainBox};

/// sigma = I. Satisfies every condition; the SDE it drives is additive.
pub struct IdentityField {
    dof: usize,
    witnesses: Vec<WitnessGradient>,
    chart: ChartWitness,
}

impl IdentityField {
    pub fn new(dof: usize) -> Self {
        let dim = 2 * dof;
        let witnesses = (0..dim)
            .map(|i| {
                let mut e = DVector::zeros(dim);
                e[i] = 1.0;
                let grad = apply_neg_j(&e); // J grad H_i = e_i
                Box::new(move |_: &DVector<f64>| grad.clone()) as WitnessGradient
            })
            .collect();
        let chart = ChartWitness {
            map: Box::new(|y: &DVector<f64>| y.clone()),
            jacobian: Box::new(move |_: &DVector<f64>| DMatrix::identity(dim, dim)),
            domain: DomainBox::centered_cube(dim, 1.5),
        };
        IdentityField {
            dof,
            witnesses,
            chart,
        }
    }
}

impl DiffusionField for IdentityField {
    fn dof(&self) -> usize {
        self.dof
    }

    fn sigma(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }

    fn sigma_into(&self, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill_with_identity();
    }

    fn sigma_derivative(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.dim(), self.dim()); self.dim()]
    }

    fn ellipticity(&self) -> (f64, f64) {
        (1.0, 1.0)
    }

    fn divergence_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn column_hamiltonian_gradients(&self) -> Option<&[WitnessGradient]> {
        Some(&self.witnesses)
    }

    fn chart_witness(&self) -> Option<&ChartWitness> {
        Some(&self.chart)
    }

    fn ito_correction_into(&self, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
    }
}

/// A constant symmetric matrix. Columns of any constant field are trivially
/// Hamiltonian, so every condition holds.
pub struct ConstantField {
    matrix: DMatrix<f64>,
    ellipticity: (f64, f64),
    witnesses: Vec<WitnessGradient>,
    chart: ChartWitness,
}

impl ConstantField {
    pub fn new(matrix: DMatrix<f64>, ellipticity: (f64, f64)) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 || dim % 2 != 0 || matrix.ncols() != dim {
            return Err(Error::contract(
                "constant field needs a square 2n x 2n matrix",
            ));
        }
        if (matrix.clone() - matrix.transpose()).norm() > 1e-12 * (1.0 + matrix.norm()) {
            return Err(Error::contract("diffusion matrix must be symmetric"));
        }
        if !(ellipticity.0 > 0.0 && ellipticity.1 >= ellipticity.0) {
            return Err(Error::contract("need 0 < lambda <= Lambda"));
        }
        let witnesses = (0..dim)
            .map(|i| {
                let grad = apply_neg_j(&matrix.column(i).clone_owned());
                Box::new(move |_: &DVector<f64>| grad.clone()) as WitnessGradient
            })
            .collect();
        let m = matrix.clone();
        let m2 = matrix.clone();
        let chart = ChartWitness {
            map: Box::new(move |y: &DVector<f64>| &m * y),
            jacobian: Box::new(move |_: &DVector<f64>| m2.clone()),
            domain: DomainBox::centered_cube(dim, 1.0),
        };
        Ok(ConstantField {
            matrix,
            ellipticity,
            witnesses,
            chart,
        })
    }

    /// Constant diagonal field; ellipticity constants derived from the entries.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        if entries.iter().any(|&d| d == 0.0) {
            return Err(Error::contract("diagonal entries must be nonzero"));
        }
        let lo = entries.iter().fold(f64::INFINITY, |a, &d| a.min(d * d));
        let hi = entries.iter().fold(0.0_f64, |a, &d| a.max(d * d));
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(entries)),
            (lo, hi),
        )
    }
}

impl DiffusionField for ConstantField {
    fn dof(&self) -> usize {
        self.matrix.nrows() / 2
    }

    fn sigma(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn sigma_into(&self, _x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(&self.matrix);
    }

    fn sigma_derivative(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(self.dim(), self.dim()); self.dim()]
    }

    fn ellipticity(&self) -> (f64, f64) {
        self.ellipticity
    }

    fn divergence_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn column_hamiltonian_gradients(&self) -> Option<&[WitnessGradient]> {
        Some(&self.witnesses)
    }

    fn chart_witness(&self) -> Option<&ChartWitness> {
        Some(&self.chart)
    }

    fn ito_correction_into(&self, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
    }
}

/// `sigma = diag(1 + 0.1 p^2, 1 + 0.1 q^2)` on one degree of freedom.
///
/// Both columns are Hamiltonian vector fields (witnesses
/// `H_1 = p + p^3/30`, `H_2 = -(q + q^3/30)`), so the divergence vector
/// vanishes identically; the columns do not commute, so the bracket check
/// fails. Its Itô correction also vanishes: each column varies only in the
/// direction orthogonal to itself.
pub struct QuadraticDiagField {
    ellipticity: (f64, f64),
    witnesses: Vec<WitnessGradient>,
}

impl QuadraticDiagField {
    /// Field with ellipticity declared for the centered box `|q|, |p| <= bound`.
    pub fn with_bound(bound: f64) -> Self {
        assert!(bound > 0.0);
        let top = 1.0 + 0.1 * bound * bound;
        let witnesses: Vec<WitnessGradient> = vec![
            Box::new(|x: &DVector<f64>| {
                DVector::from_column_slice(&[0.0, 1.0 + 0.1 * x[1] * x[1]])
            }),
            Box::new(|x: &DVector<f64>| {
                DVector::from_column_slice(&[-(1.0 + 0.1 * x[0] * x[0]), 0.0])
            }),
        ];
        QuadraticDiagField {
            ellipticity: (1.0, top * top),
            witnesses,
        }
    }

    pub fn new() -> Self {
        Self::with_bound(2.0)
    }
}

impl Default for QuadraticDiagField {
    fn default() -> Self {
        Self::new()
    }
}

impl DiffusionField for QuadraticDiagField {
    fn dof(&self) -> usize {
        1
    }

    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(2, 2);
        self.sigma_into(x, &mut out);
        out
    }

    fn sigma_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 0)] = 1.0 + 0.1 * x[1] * x[1];
        out[(1, 1)] = 1.0 + 0.1 * x[0] * x[0];
    }

    fn sigma_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut dq = DMatrix::zeros(2, 2);
        dq[(1, 1)] = 0.2 * x[0];
        let mut dp = DMatrix::zeros(2, 2);
        dp[(0, 0)] = 0.2 * x[1];
        vec![dq, dp]
    }

    fn ellipticity(&self) -> (f64, f64) {
        self.ellipticity
    }

    fn divergence_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }

    fn column_hamiltonian_gradients(&self) -> Option<&[WitnessGradient]> {
        Some(&self.witnesses)
    }

    fn ito_correction_into(&self, _x: &DVector<f64>, out: &mut DVector<f64>) {
        out.fill(0.0);
    }
}

/// `sigma = diag(sqrt(1+q^2), sqrt(1+p^2))` on one degree of freedom.
///
/// The columns commute (each depends only on its own coordinate through its
/// own slot), so the bracket check passes and the chart witness
/// `U(y) = (sinh y_1, sinh y_2)` realizes the coordinate-change condition
/// directly. The columns are not divergence-free, so the Hamiltonian-column
/// condition fails and the action functional keeps its divergence term.
pub struct SqrtDiagField {
    ellipticity: (f64, f64),
    chart: ChartWitness,
}

impl SqrtDiagField {
    pub fn with_bound(bound: f64) -> Self {
        assert!(bound > 0.0);
        // chart coordinates map [-asinh(bound), asinh(bound)] onto [-bound, bound]
        let y_half = bound.asinh();
        let chart = ChartWitness {
            map: Box::new(|y: &DVector<f64>| {
                DVector::from_column_slice(&[y[0].sinh(), y[1].sinh()])
            }),
            jacobian: Box::new(|y: &DVector<f64>| {
                DMatrix::from_diagonal(&DVector::from_column_slice(&[y[0].cosh(), y[1].cosh()]))
            }),
            domain: DomainBox::centered_cube(2, y_half),
        };
        SqrtDiagField {
            ellipticity: (1.0, 1.0 + bound * bound),
            chart,
        }
    }

    pub fn new() -> Self {
        Self::with_bound(2.0)
    }
}

impl Default for SqrtDiagField {
    fn default() -> Self {
        Self::new()
    }
}

impl DiffusionField for SqrtDiagField {
    fn dof(&self) -> usize {
        1
    }

    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(2, 2);
        self.sigma_into(x, &mut out);
        out
    }

    fn sigma_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        out[(0, 0)] = (1.0 + x[0] * x[0]).sqrt();
        out[(1, 1)] = (1.0 + x[1] * x[1]).sqrt();
    }

    fn sigma_derivative(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut dq = DMatrix::zeros(2, 2);
        dq[(0, 0)] = x[0] / (1.0 + x[0] * x[0]).sqrt();
        let mut dp = DMatrix::zeros(2, 2);
        dp[(1, 1)] = x[1] / (1.0 + x[1] * x[1]).sqrt();
        vec![dq, dp]
    }

    fn ellipticity(&self) -> (f64, f64) {
        self.ellipticity
    }

    fn divergence_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(2, 2);
        out[(0, 0)] = (1.0 + x[0] * x[0]).powf(-1.5);
        out[(1, 1)] = (1.0 + x[1] * x[1]).powf(-1.5);
        out
    }

    fn chart_witness(&self) -> Option<&ChartWitness> {
        Some(&self.chart)
    }

    fn ito_correction_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        // (sigma_1 . grad) sigma_1 = (q, 0), (sigma_2 . grad) sigma_2 = (0, p)
        out[0] = 0.5 * x[0];
        out[1] = 0.5 * x[1];
    }
}
