//! Numerical toolkit for stochastic Hamiltonian systems driven by
//! multiplicative Stratonovich noise.
//!
//! The crate simulates `dX = J grad H(X) dt + gamma sigma(X) ∘ dW`, evaluates
//! path action functionals and their rate-function counterpart, solves the
//! fixed-endpoint most-probable-path problem, estimates tube probabilities by
//! Monte Carlo, and runs persistence diagnostics for quasi-periodic orbits of
//! nearly integrable systems. See the book under `book/` for a guided tour;
//! its code snippets run as doc-tests of this crate.

pub mod error;
mod fd;
pub mod hamiltonian;
pub mod kam;
pub mod noise;
pub mod path;
pub mod phase;
pub mod prob;
pub mod registry;
pub mod sde;
pub mod variational;

pub use error::{Error, Result};
pub use path::DiscretePath;
pub use phase::{DomainBox, PhasePoint, SymplecticConvention};

/// Configures the global thread pool used for Monte Carlo ensembles and
/// condition-check sampling. Call at most once, before any parallel work;
/// later calls report failure. With no call, the pool sizes itself to the
/// machine.
pub fn configure_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameters(format!("thread pool: {e}")))
}

// Book chapters double as doc-tests so the guide can never drift from the
// API. `cargo test --doc` runs every ```rust fence in them.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/hamiltonian.md")]
    mod hamiltonian {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/action.md")]
    mod action {}
    #[doc = include_str!("../../../book/src/probability.md")]
    mod probability {}
    #[doc = include_str!("../../../book/src/kam.md")]
    mod kam {}
}
