//! Phase-space points, the symplectic matrix, and domain boxes.
//!
//! State vectors are ordered `(q_1..q_n, p_1..p_n)`. The symplectic matrix is
//! fixed as `J = [[0, I], [-I, 0]]` acting on that ordering, so
//! `J (a, b) = (b, -a)`; every module in the crate inherits this convention.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A validated point of 2n-dimensional phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    coords: DVector<f64>,
}

impl PhasePoint {
    /// Wraps a coordinate vector, requiring even length and finite entries.
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if coords.len() == 0 || coords.len() % 2 != 0 {
            return Err(Error::contract(format!(
                "phase point must have positive even length, got {}",
                coords.len()
            )));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite {
                what: "phase point",
                point: coords.iter().copied().collect(),
            });
        }
        Ok(PhasePoint { coords })
    }

    /// Convenience constructor from a slice.
    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    /// Degrees of freedom n.
    pub fn dof(&self) -> usize {
        self.coords.len() / 2
    }

    /// Full phase-space dimension 2n.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    /// Position block `q`.
    pub fn q(&self) -> nalgebra::DVectorView<'_, f64> {
        self.coords.rows(0, self.dof())
    }

    /// Momentum block `p`.
    pub fn p(&self) -> nalgebra::DVectorView<'_, f64> {
        self.coords.rows(self.dof(), self.dof())
    }
}

/// Applies the symplectic matrix: `J (q, p) = (p, -q)`.
pub fn apply_j(v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    apply_j_into(v, &mut out);
    out
}

/// In-place variant of [`apply_j`] for hot loops.
pub fn apply_j_into(v: &DVector<f64>, out: &mut DVector<f64>) {
    let n = v.len() / 2;
    debug_assert_eq!(v.len(), 2 * n);
    debug_assert_eq!(out.len(), v.len());
    for i in 0..n {
        out[i] = v[n + i];
        out[n + i] = -v[i];
    }
}

/// Applies `-J`: `-J (q, p) = (-p, q)`.
pub fn apply_neg_j(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() / 2;
    let mut out = DVector::zeros(v.len());
    for i in 0..n {
        out[i] = -v[n + i];
        out[n + i] = v[i];
    }
    out
}

/// The standard symplectic matrix for n degrees of freedom.
#[derive(Debug, Clone, Copy)]
pub struct SymplecticConvention {
    pub dof: usize,
}

impl SymplecticConvention {
    pub fn new(dof: usize) -> Self {
        SymplecticConvention { dof }
    }

    /// Dense `J = [[0, I], [-I, 0]]`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dof;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = 1.0;
            j[(n + i, i)] = -1.0;
        }
        j
    }
}

/// An axis-aligned box in phase space, used as sampling domain for condition
/// checks and as the bounded region trajectories may not leave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::contract(
                "domain box bounds must have equal nonzero length",
            ));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::contract(
                "domain box must satisfy lo < hi componentwise",
            ));
        }
        Ok(DomainBox { lo, hi })
    }

    /// Centered cube `[-half, half]^dim`.
    pub fn centered_cube(dim: usize, half: f64) -> Self {
        DomainBox {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lo[i] && v <= self.hi[i])
    }

    /// Smallest box containing all the given points, padded by `margin` on
    /// every side.
    pub fn hull_of<'a>(
        points: impl Iterator<Item = &'a DVector<f64>>,
        margin: f64,
    ) -> Result<Self> {
        let mut lo: Option<Vec<f64>> = None;
        let mut hi: Option<Vec<f64>> = None;
        for x in points {
            let lo = lo.get_or_insert_with(|| x.iter().copied().collect());
            let hi = hi.get_or_insert_with(|| x.iter().copied().collect());
            for (i, &v) in x.iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        let (mut lo, mut hi) = match (lo, hi) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(Error::contract("hull of empty point set")),
        };
        for i in 0..lo.len() {
            lo[i] -= margin;
            hi[i] += margin;
        }
        DomainBox::new(lo, hi)
    }

    /// The k-th point of a low-discrepancy Kronecker lattice over the box.
    ///
    /// Deterministic; successive indices fill the box quasi-uniformly, which is
    /// how the condition checkers sample "all x in the closure" decidably.
    pub fn lattice_point(&self, index: usize) -> DVector<f64> {
        let d = self.dim();
        let phi = generalized_golden(d);
        let mut alpha = 1.0;
        DVector::from_iterator(
            d,
            (0..d).map(|i| {
                alpha /= phi;
                let u = (0.5 + (index as f64 + 1.0) * alpha).fract();
                self.lo[i] + u * (self.hi[i] - self.lo[i])
            }),
        )
    }
}

/// Root of `x^(d+1) = x + 1`, the base of the R_d quasi-random sequence.
fn generalized_golden(d: usize) -> f64 {
    let mut x = 1.5_f64;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (d as f64 + 1.0));
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_point_rejects_odd_and_nonfinite() {
        assert!(PhasePoint::from_slice(&[1.0, 2.0, 3.0]).is_err());
        assert!(PhasePoint::from_slice(&[1.0, f64::NAN]).is_err());
        assert!(PhasePoint::from_slice(&[]).is_err());
        let x = PhasePoint::from_slice(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.dof(), 2);
        assert_eq!(x.q().as_slice(), &[1.0, 2.0]);
        assert_eq!(x.p().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn j_matrix_squares_to_minus_identity_and_is_antisymmetric() {
        for n in [1usize, 2, 3] {
            let j = SymplecticConvention::new(n).matrix();
            let jj = &j * &j;
            let minus_id = -DMatrix::<f64>::identity(2 * n, 2 * n);
            assert_eq!(jj, minus_id);
            assert_eq!(j.transpose(), -&j);
        }
    }

    #[test]
    fn apply_j_matches_dense_matrix() {
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        let j = SymplecticConvention::new(2).matrix();
        assert_eq!(apply_j(&v), &j * &v);
        assert_eq!(apply_neg_j(&v), -(&j * &v));
    }

    #[test]
    fn lattice_points_stay_inside_and_spread() {
        let b = DomainBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let pts: Vec<_> = (0..512).map(|k| b.lattice_point(k)).collect();
        assert!(pts.iter().all(|x| b.contains(x)));
        // crude uniformity: each quadrant of the box sees a fair share
        let in_low = pts.iter().filter(|x| x[0] < 0.0).count();
        assert!(in_low > 200 && in_low < 312, "low half got {in_low}/512");
    }

    #[test]
    fn hull_pads_by_margin() {
        let pts = [
            DVector::from_column_slice(&[0.0, 1.0]),
            DVector::from_column_slice(&[2.0, -1.0]),
        ];
        let b = DomainBox::hull_of(pts.iter(), 0.5).unwrap();
        assert_eq!(b.lo, vec![-0.5, -1.5]);
        assert_eq!(b.hi, vec![2.5, 1.5]);
    }
}
