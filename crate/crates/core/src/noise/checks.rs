//! Decidable sampling checks for the structure conditions on sigma.
//!
//! The conditions are pointwise statements over the closure of a domain,
//! which no finite procedure can decide; the checkers sample a
//! low-discrepancy lattice over a declared box (default 4096 points) and
//! report the worst case seen, with symmetry and bracket tolerances scaled by
//! `1 + ||sigma||` at the sample so verdicts stay meaningful across
//! magnitudes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lie_bracket_from, DiffusionField};
use crate::error::{Error, Result};
use crate::phase::{apply_j, apply_neg_j, DomainBox};

pub const DEFAULT_CONDITION_SAMPLES: usize = 4096;

const BRACKET_TOL: f64 = 1e-8;
const ASYMMETRY_TOL: f64 = 1e-8;
const WITNESS_TOL: f64 = 1e-10;
const CHART_TOL: f64 = 1e-10;
const ELLIPTICITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "C2-ellipticity")]
    Ellipticity,
    #[serde(rename = "C3-frobenius")]
    Frobenius,
    #[serde(rename = "C3-chart-witness")]
    ChartWitness,
    #[serde(rename = "C4-hamiltonian-columns")]
    HamiltonianColumns,
}

/// Outcome of one condition check: verdict, the worst sample, and how hard it
/// failed or passed there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub verdict: Verdict,
    /// Sample with the largest violation measure.
    pub worst_point: Option<Vec<f64>>,
    /// Violation measure at the worst point; at or below `tolerance` passes.
    pub worst_magnitude: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub domain: DomainBox,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn validate(domain: &DomainBox, samples: usize, dim: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    if domain.dim() != dim {
        return Err(Error::contract(format!(
            "domain box has dimension {}, field expects {dim}",
            domain.dim()
        )));
    }
    Ok(())
}

/// Scans for the worst (magnitude, point) pair across lattice samples.
/// Reduction is a max, so the parallel order cannot change the result.
fn scan_worst<F>(domain: &DomainBox, samples: usize, eval: F) -> (f64, Vec<f64>)
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let worst = (0..samples)
        .into_par_iter()
        .map(|k| {
            let x = domain.lattice_point(k);
            let m = eval(&x);
            (m, k, x)
        })
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, DVector::zeros(0)),
            |a, b| {
                // strictly larger magnitude wins; ties go to the lower index
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    let (magnitude, _, point) = worst;
    (magnitude, point.iter().copied().collect())
}

/// Uniform ellipticity: the spectrum of sigma(x)^2 must lie inside the
/// declared `[lambda, Lambda]`, up to a 1e-9 relative slack. The extreme
/// Rayleigh quotients at each sample are its eigenvalue bounds.
pub fn check_ellipticity(
    field: &dyn DiffusionField,
    domain: &DomainBox,
    samples: usize,
) -> Result<ConditionReport> {
    validate(domain, samples, field.dim())?;
    let (lambda, big_lambda) = field.ellipticity();
    let (worst, point) = scan_worst(domain, samples, |x| {
        let s = field.sigma(x);
        let s2 = &s * &s;
        let eigen = s2.symmetric_eigen();
        let lo = eigen.eigenvalues.min();
        let hi = eigen.eigenvalues.max();
        (lambda * (1.0 - ELLIPTICITY_SLACK) - lo).max(hi - big_lambda * (1.0 + ELLIPTICITY_SLACK))
    });
    Ok(ConditionReport {
        condition: Condition::Ellipticity,
        verdict: if worst <= 0.0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        worst_point: Some(point),
        worst_magnitude: worst,
        tolerance: 0.0,
        samples,
        domain: domain.clone(),
    })
}

/// Commuting-column check: all pairwise Lie brackets of the column fields
/// must vanish. Bracket norms are scaled by `1 + ||sigma||`; this is the
/// sufficient condition for a local chart with `sigma(U) = DU`.
pub fn check_frobenius(
    field: &dyn DiffusionField,
    domain: &DomainBox,
    samples: usize,
) -> Result<ConditionReport> {
    validate(domain, samples, field.dim())?;
    let dim = field.dim();
    let (worst, point) = scan_worst(domain, samples, |x| {
        let s = field.sigma(x);
        let derivs = field.sigma_derivative(x);
        let scale = 1.0 + s.norm();
        let mut max_norm = 0.0_f64;
        for j in 0..dim {
            for k in (j + 1)..dim {
                max_norm = max_norm.max(lie_bracket_from(&s, &derivs, j, k).norm());
            }
        }
        max_norm / scale
    });
    Ok(ConditionReport {
        condition: Condition::Frobenius,
        verdict: if worst <= BRACKET_TOL {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        worst_point: Some(point),
        worst_magnitude: worst,
        tolerance: BRACKET_TOL,
        samples,
        domain: domain.clone(),
    })
}

/// Hamiltonian-column check: a vector field V is locally Hamiltonian iff the
/// Jacobian of `-J V` is symmetric. When witness Hamiltonians are declared,
/// additionally verifies `sigma_i = J grad H_i` to 1e-10.
pub fn check_hamiltonian_columns(
    field: &dyn DiffusionField,
    domain: &DomainBox,
    samples: usize,
) -> Result<ConditionReport> {
    validate(domain, samples, field.dim())?;
    let dim = field.dim();
    let witnesses = field.column_hamiltonian_gradients();
    let (worst, point) = scan_worst(domain, samples, |x| {
        let s = field.sigma(x);
        let derivs = field.sigma_derivative(x);
        let scale = 1.0 + s.norm();
        let mut magnitude = 0.0_f64;
        for i in 0..dim {
            // column l of D(-J V_i) is -J (d sigma / d x_l) e_i
            let mut jac = DMatrix::zeros(dim, dim);
            for l in 0..dim {
                jac.set_column(l, &apply_neg_j(&derivs[l].column(i).clone_owned()));
            }
            let asym = (&jac - jac.transpose()).norm() / scale;
            magnitude = magnitude.max(asym);
        }
        if let Some(grads) = witnesses {
            for (i, g) in grads.iter().enumerate() {
                let mismatch = (apply_j(&g(x)) - s.column(i).clone_owned()).amax();
                // witness mismatch is held to its own absolute tolerance;
                // map it onto the shared magnitude axis
                if mismatch > WITNESS_TOL {
                    magnitude = magnitude.max(mismatch);
                }
            }
        }
        magnitude
    });
    Ok(ConditionReport {
        condition: Condition::HamiltonianColumns,
        verdict: if worst <= ASYMMETRY_TOL {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        worst_point: Some(point),
        worst_magnitude: worst,
        tolerance: ASYMMETRY_TOL,
        samples,
        domain: domain.clone(),
    })
}

/// Direct verification of a declared chart witness:
/// `sup_y ||sigma(U(y)) - DU(y)|| <= 1e-10` over the witness's own domain.
/// Fields without a witness report `NotChecked`.
pub fn check_chart_witness(field: &dyn DiffusionField, samples: usize) -> Result<ConditionReport> {
    let witness = match field.chart_witness() {
        Some(w) => w,
        None => {
            return Ok(ConditionReport {
                condition: Condition::ChartWitness,
                verdict: Verdict::NotChecked,
                worst_point: None,
                worst_magnitude: 0.0,
                tolerance: CHART_TOL,
                samples: 0,
                domain: DomainBox::centered_cube(field.dim(), 1.0),
            })
        }
    };
    if samples == 0 {
        return Err(Error::contract("need at least one sample"));
    }
    let (worst, point) = scan_worst(&witness.domain, samples, |y| {
        let x = (witness.map)(y);
        ((witness.jacobian)(y) - field.sigma(&x)).amax()
    });
    Ok(ConditionReport {
        condition: Condition::ChartWitness,
        verdict: if worst <= CHART_TOL {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        worst_point: Some(point),
        worst_magnitude: worst,
        tolerance: CHART_TOL,
        samples,
        domain: witness.domain.clone(),
    })
}
