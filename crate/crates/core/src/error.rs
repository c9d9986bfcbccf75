//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an API contract (dimension mismatch, bad parameter range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite {what} at point {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },

    /// The implicit-midpoint fixed point did not converge.
    #[error("implicit midpoint did not converge at step {step} ({iterations} iterations, residual {residual:.3e})")]
    IntegrationFailure {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    /// sigma(x) is too close to singular for a trustworthy inverse.
    #[error("near-singular diffusion matrix (condition estimate {cond:.3e} > limit {limit:.3e}) at {point:?}{}", .node.map(|k| format!(" (interval {k})")).unwrap_or_default())]
    NearSingular {
        cond: f64,
        limit: f64,
        point: Vec<f64>,
        /// Grid interval at which the failure occurred, when evaluating along a path.
        node: Option<usize>,
    },

    /// A trajectory left the declared domain box. Callers decide whether this
    /// means tube-miss or abort.
    #[error("trajectory left the domain box at step {step}")]
    DomainExit { step: usize },

    /// Action-angle chart is undefined where an action component vanishes.
    #[error("action-angle chart singular: oscillator {oscillator} sits at the origin")]
    ChartSingularity { oscillator: usize },

    /// Angle increments too large to unwrap unambiguously.
    #[error("angle sampling too coarse: |increment| = {magnitude:.4} rad at sample {index}")]
    SamplingTooCoarse { index: usize, magnitude: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    /// Every requested curve point was unusable.
    #[error("empty curve: {0}; increase epsilon or the replicate count")]
    EmptyCurve(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
