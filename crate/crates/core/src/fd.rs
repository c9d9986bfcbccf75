//! Central finite differences, used as the documented fallback for
//! user-supplied systems and fields that do not provide analytic derivatives.

use nalgebra::{DMatrix, DVector};

pub(crate) const DEFAULT_STEP: f64 = 1e-5;

pub(crate) fn central_gradient<F>(f: F, x: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut out = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        out[i] = (fp - fm) / (2.0 * step);
    }
    out
}

/// Jacobian of a vector field, column k = d f / d x_k.
pub(crate) fn central_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let probe = f(x);
    let mut out = DMatrix::zeros(probe.len(), x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        xp[k] = x[k] + step;
        let fp = f(&xp);
        xp[k] = x[k] - step;
        let fm = f(&xp);
        xp[k] = x[k];
        out.set_column(k, &((fp - fm) / (2.0 * step)));
    }
    out
}
