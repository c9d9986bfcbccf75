//! Per-oscillator action-angle chart `I_j = (q_j^2 + p_j^2)/2`,
//! `theta_j = atan2(p_j, q_j)`, valid for products of harmonic-type
//! oscillators. General charts for arbitrary integrable systems are out of
//! scope; the library assumes the decomposition is given in this form.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::phase::PhasePoint;

/// Maps a phase point to `(theta, action)`. Fails where an oscillator sits at
/// its origin, since the angle is undefined there.
pub fn to_action_angle(x: &PhasePoint) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = x.dof();
    let mut theta = DVector::zeros(n);
    let mut action = DVector::zeros(n);
    for j in 0..n {
        let (q, p) = (x.coords()[j], x.coords()[n + j]);
        if q == 0.0 && p == 0.0 {
            return Err(Error::ChartSingularity { oscillator: j });
        }
        action[j] = 0.5 * (q * q + p * p);
        theta[j] = p.atan2(q);
    }
    Ok((theta, action))
}

/// Inverse chart: `q_j = sqrt(2 I_j) cos theta_j`, `p_j = sqrt(2 I_j) sin theta_j`.
pub fn from_action_angle(theta: &DVector<f64>, action: &DVector<f64>) -> Result<PhasePoint> {
    if theta.len() != action.len() || theta.is_empty() {
        return Err(Error::contract(
            "theta and action must have equal nonzero length",
        ));
    }
    if let Some(j) = action.iter().position(|&a| a < 0.0) {
        return Err(Error::contract(format!("negative action component {j}")));
    }
    let n = theta.len();
    let mut coords = DVector::zeros(2 * n);
    for j in 0..n {
        let r = (2.0 * action[j]).sqrt();
        coords[j] = r * theta[j].cos();
        coords[n + j] = r * theta[j].sin();
    }
    PhasePoint::new(coords)
}
