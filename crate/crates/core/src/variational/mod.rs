//! The path action functional, its exact discrete gradient, and the
//! fixed-endpoint most-probable-path problem.
//!
//! For a path `phi` with derivative `phi'`, the action is
//!
//! ```text
//! int |sigma^{-1}(phi)(J grad H(phi) - phi')|^2 ds
//!   - int (div sigma(phi)) . (sigma^{-1}(phi) J grad H(phi)) ds
//! ```
//!
//! discretized with midpoint quadrature: interval k uses the chord slope
//! `(x_{k+1} - x_k)/dt` and the state `(x_k + x_{k+1})/2`. This choice makes
//! the discrete functional of a discrete flow path vanish to scheme order.
//! The rate function governing small-noise decay is half the quadratic term,
//! with an infinite branch for paths that do not start at the prescribed
//! initial point.

mod solver;

pub use solver::{
    solve_mpp, verify_flow_coincidence, FlowCoincidenceReport, FlowCoincidenceStatus, MppOptions,
    MppSolution,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::noise::{divergence_from_derivs, sigma_inverse_of, DiffusionField};
use crate::path::DiscretePath;
use crate::phase::PhasePoint;

/// The two summands of the action: `total = quadratic - divergence`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionBreakdown {
    /// `sum_k dt |sigma^{-1}(m_k)(J grad H(m_k) - v_k)|^2`, nonnegative.
    pub quadratic_term: f64,
    /// `sum_k dt (div sigma(m_k)) . (sigma^{-1}(m_k) J grad H(m_k))`.
    pub divergence_term: f64,
    pub total: f64,
    pub n_steps: usize,
    pub quadrature: &'static str,
}

const QUADRATURE_ID: &str = "midpoint-state/forward-difference-velocity";

/// Rate-function value; the infinite branch marks paths that are not
/// admissible competitors (wrong initial point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateValue {
    Finite(f64),
    Infinite,
}

impl RateValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, RateValue::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(*v),
            RateValue::Infinite => None,
        }
    }
}

fn validate_pair(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    path: &DiscretePath,
    min_steps: usize,
) -> Result<()> {
    if sys.dim() != path.dim() || field.dim() != path.dim() {
        return Err(Error::contract(format!(
            "dimension mismatch: system {}, field {}, path {}",
            sys.dim(),
            field.dim(),
            path.dim()
        )));
    }
    if path.n_steps() < min_steps {
        return Err(Error::contract(format!(
            "path needs at least {min_steps} intervals, has {}",
            path.n_steps()
        )));
    }
    Ok(())
}

/// State-dependent quantities of the action integrand at one evaluation point.
struct PointEval {
    /// sigma^{-1}
    a: DMatrix<f64>,
    /// residual `a (J grad H - v)`
    r: DVector<f64>,
    /// `a J grad H`
    w: DVector<f64>,
    /// div sigma
    d: DVector<f64>,
}

/// Derivative-level quantities: Jacobians of the residual and of the
/// divergence part with respect to the evaluation state.
struct PointDerivs {
    /// `G = d/dy [a(y)(J grad H(y) - v)]` at fixed v
    g_mat: DMatrix<f64>,
    /// gradient of `f(y) = div sigma(y) . (a(y) J grad H(y))`
    df: DVector<f64>,
}

fn eval_point(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    y: &DVector<f64>,
    v: &DVector<f64>,
    interval: Option<usize>,
) -> Result<PointEval> {
    let s = field.sigma(y);
    let a = sigma_inverse_of(&s, field.ellipticity(), y).map_err(|e| match e {
        Error::NearSingular {
            cond, limit, point, ..
        } => Error::NearSingular {
            cond,
            limit,
            point,
            node: interval,
        },
        other => other,
    })?;
    let g = crate::phase::apply_j(&sys.gradient(y));
    let r = &a * (&g - v);
    let w = &a * &g;
    let derivs = field.sigma_derivative(y);
    let d = divergence_from_derivs(&derivs);
    Ok(PointEval { a, r, w, d })
}

/// `J M` without forming J.
fn j_times(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() / 2;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        for i in 0..n {
            out[(i, c)] = m[(n + i, c)];
            out[(n + i, c)] = -m[(i, c)];
        }
    }
    out
}

fn eval_derivs(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    y: &DVector<f64>,
    pe: &PointEval,
) -> PointDerivs {
    let dim = y.len();
    let sigma_derivs = field.sigma_derivative(y);
    // B = a J Hess(y): the Jacobian of a(y) J grad H(y) holding a fixed
    let b = &pe.a * j_times(&sys.hessian(y));
    // column l of (d a / d x_l) u = -a S_l a u = -a S_l (a u); assemble for
    // u = (J grad H - v) giving G, and u = J grad H giving the w-Jacobian
    let mut g_mat = b.clone();
    let mut w_jac = b;
    for l in 0..dim {
        let sr = &sigma_derivs[l] * &pe.r;
        let sw = &sigma_derivs[l] * &pe.w;
        let col_r = -(&pe.a * sr);
        let col_w = -(&pe.a * sw);
        for i in 0..dim {
            g_mat[(i, l)] += col_r[i];
            w_jac[(i, l)] += col_w[i];
        }
    }
    // grad f = (D div sigma)^T w + (Dw)^T d
    let dd = field.divergence_jacobian(y);
    let df = dd.transpose() * &pe.w + w_jac.transpose() * &pe.d;
    PointDerivs { g_mat, df }
}

/// Evaluates the action of a path: quadratic and divergence summands and
/// their difference.
pub fn om_action(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    path: &DiscretePath,
) -> Result<ActionBreakdown> {
    validate_pair(sys, field, path, 2)?;
    let dt = path.dt();
    let mut quadratic = 0.0;
    let mut divergence = 0.0;
    let mut mid = DVector::zeros(path.dim());
    let mut vel = DVector::zeros(path.dim());
    for k in 0..path.n_steps() {
        let (x0, x1) = (path.node(k), path.node(k + 1));
        for i in 0..path.dim() {
            mid[i] = 0.5 * (x0[i] + x1[i]);
            vel[i] = (x1[i] - x0[i]) / dt;
        }
        let pe = eval_point(sys, field, &mid, &vel, Some(k))?;
        quadratic += dt * pe.r.norm_squared();
        divergence += dt * pe.d.dot(&pe.w);
    }
    Ok(ActionBreakdown {
        quadratic_term: quadratic,
        divergence_term: divergence,
        total: quadratic - divergence,
        n_steps: path.n_steps(),
        quadrature: QUADRATURE_ID,
    })
}

/// The rate function: half the quadratic term for admissible paths (exact
/// initial-point match and finite discrete derivative energy), infinite
/// otherwise.
pub fn rate_function(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    path: &DiscretePath,
    x0: &PhasePoint,
) -> Result<RateValue> {
    if path.start() != x0.coords() {
        return Ok(RateValue::Infinite);
    }
    let action = om_action(sys, field, path)?;
    Ok(RateValue::Finite(0.5 * action.quadratic_term))
}

/// Exact gradient of the discrete action total with respect to the interior
/// nodes `x_1 .. x_{N-1}`, endpoints held fixed.
pub fn om_gradient(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    path: &DiscretePath,
) -> Result<Vec<DVector<f64>>> {
    validate_pair(sys, field, path, 3)?;
    let n = path.n_steps();
    let dim = path.dim();
    let dt = path.dt();

    // per-interval pieces, then each interior node gathers from its two
    // adjacent intervals
    let mut a_t_r: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut g_t_r: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut df: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut mid = DVector::zeros(dim);
    let mut vel = DVector::zeros(dim);
    for k in 0..n {
        let (x0, x1) = (path.node(k), path.node(k + 1));
        for i in 0..dim {
            mid[i] = 0.5 * (x0[i] + x1[i]);
            vel[i] = (x1[i] - x0[i]) / dt;
        }
        let pe = eval_point(sys, field, &mid, &vel, Some(k))?;
        let pd = eval_derivs(sys, field, &mid, &pe);
        a_t_r.push(pe.a.transpose() * &pe.r);
        g_t_r.push(pd.g_mat.transpose() * &pe.r);
        df.push(pd.df);
    }

    let mut grad = Vec::with_capacity(n - 1);
    for j in 1..n {
        // quadratic part: interval j-1 sees x_j as its right endpoint,
        // interval j as its left
        let mut gj = (&g_t_r[j - 1] + &g_t_r[j]) * dt;
        gj.axpy(2.0, &a_t_r[j], 1.0);
        gj.axpy(-2.0, &a_t_r[j - 1], 1.0);
        // divergence part enters with a minus sign in the total
        gj.axpy(-0.5 * dt, &df[j - 1], 1.0);
        gj.axpy(-0.5 * dt, &df[j], 1.0);
        grad.push(gj);
    }
    Ok(grad)
}

/// Per-node Euler-Lagrange residual norms of the action Lagrangian,
/// `dL/dy - d/dt (dL/dy')`, with the time derivative taken by second
/// differences of the half-grid momenta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElResidual {
    /// Euclidean residual norm at interior nodes 1..N-1.
    pub per_node: Vec<f64>,
    pub max: f64,
}

pub fn euler_lagrange_residual(
    sys: &dyn Hamiltonian,
    field: &dyn DiffusionField,
    path: &DiscretePath,
) -> Result<ElResidual> {
    validate_pair(sys, field, path, 3)?;
    let n = path.n_steps();
    let dim = path.dim();
    let dt = path.dt();

    // conjugate momenta dL/dy' = -2 a^T r at the half-grid points
    let mut momenta: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut mid = DVector::zeros(dim);
    let mut vel = DVector::zeros(dim);
    for k in 0..n {
        let (x0, x1) = (path.node(k), path.node(k + 1));
        for i in 0..dim {
            mid[i] = 0.5 * (x0[i] + x1[i]);
            vel[i] = (x1[i] - x0[i]) / dt;
        }
        let pe = eval_point(sys, field, &mid, &vel, Some(k))?;
        momenta.push((pe.a.transpose() * &pe.r) * -2.0);
    }

    let mut per_node = Vec::with_capacity(n - 1);
    let mut max = 0.0_f64;
    for k in 1..n {
        // state derivative dL/dy at the node, with the centered velocity
        let vel_c = (path.node(k + 1) - path.node(k - 1)) / (2.0 * dt);
        let pe = eval_point(sys, field, path.node(k), &vel_c, Some(k))?;
        let pd = eval_derivs(sys, field, path.node(k), &pe);
        let dl_dy = pd.g_mat.transpose() * &pe.r * 2.0 - &pd.df;
        let residual = dl_dy - (&momenta[k] - &momenta[k - 1]) / dt;
        let norm = residual.norm();
        max = max.max(norm);
        per_node.push(norm);
    }
    Ok(ElResidual { per_node, max })
}
