//! Named constructors for the library systems and diffusion fields, the
//! vocabulary a batch configuration file selects from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::systems::{Harmonic, Pendulum, Twist2d, Zero};
use crate::hamiltonian::{Hamiltonian, NearlyIntegrable};
use crate::noise::{
    ConstantField, DiffusionField, IdentityField, QuadraticDiagField, SqrtDiagField,
};

fn default_dof() -> usize {
    1
}

/// A Hamiltonian system selected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum SystemSpec {
    /// Uncoupled unit oscillators.
    Harmonic {
        #[serde(default = "default_dof")]
        dof: usize,
    },
    /// `H = p^2/2 - cos q`.
    Pendulum,
    /// Two-oscillator twist system with coupling amplitude `eta`.
    Twist2d { eta: f64 },
    /// `H = 0`.
    Zero {
        #[serde(default = "default_dof")]
        dof: usize,
    },
}

impl SystemSpec {
    pub fn build(&self) -> Result<Box<dyn Hamiltonian>> {
        match self {
            SystemSpec::Harmonic { dof } => {
                ensure_dof(*dof)?;
                Ok(Box::new(Harmonic::new(*dof)))
            }
            SystemSpec::Pendulum => Ok(Box::new(Pendulum)),
            SystemSpec::Twist2d { eta } => {
                if *eta < 0.0 {
                    return Err(Error::InvalidParameters("eta must be nonnegative".into()));
                }
                Ok(Box::new(Twist2d::new(*eta)))
            }
            SystemSpec::Zero { dof } => {
                ensure_dof(*dof)?;
                Ok(Box::new(Zero::new(*dof)))
            }
        }
    }

    /// The nearly integrable view, for systems that declare one.
    pub fn build_nearly_integrable(&self) -> Result<Box<dyn NearlyIntegrable>> {
        match self {
            SystemSpec::Twist2d { eta } => {
                if *eta < 0.0 {
                    return Err(Error::InvalidParameters("eta must be nonnegative".into()));
                }
                Ok(Box::new(Twist2d::new(*eta)))
            }
            other => Err(Error::InvalidParameters(format!(
                "system {other:?} has no angle-action decomposition registered"
            ))),
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            SystemSpec::Harmonic { dof } | SystemSpec::Zero { dof } => *dof,
            SystemSpec::Pendulum => 1,
            SystemSpec::Twist2d { .. } => 2,
        }
    }
}

fn ensure_dof(dof: usize) -> Result<()> {
    if dof == 0 {
        return Err(Error::InvalidParameters("dof must be at least 1".into()));
    }
    Ok(())
}

/// A diffusion coefficient selected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum FieldSpec {
    /// sigma = I.
    Identity {
        #[serde(default = "default_dof")]
        dof: usize,
    },
    /// `diag(1 + 0.1 p^2, 1 + 0.1 q^2)`: Hamiltonian columns, bracket fails.
    QuadraticDiag,
    /// `diag(sqrt(1+q^2), sqrt(1+p^2))`: commuting columns, divergence stays.
    SqrtDiag,
    /// Constant diagonal matrix.
    ConstantDiag { diag: Vec<f64> },
}

impl FieldSpec {
    pub fn build(&self) -> Result<Box<dyn DiffusionField>> {
        match self {
            FieldSpec::Identity { dof } => {
                ensure_dof(*dof)?;
                Ok(Box::new(IdentityField::new(*dof)))
            }
            FieldSpec::QuadraticDiag => Ok(Box::new(QuadraticDiagField::new())),
            FieldSpec::SqrtDiag => Ok(Box::new(SqrtDiagField::new())),
            FieldSpec::ConstantDiag { diag } => Ok(Box::new(ConstantField::diagonal(diag)?)),
        }
    }

    pub fn dof(&self) -> Result<usize> {
        match self {
            FieldSpec::Identity { dof } => Ok(*dof),
            FieldSpec::QuadraticDiag | FieldSpec::SqrtDiag => Ok(1),
            FieldSpec::ConstantDiag { diag } => {
                if diag.is_empty() || diag.len() % 2 != 0 {
                    return Err(Error::InvalidParameters(
                        "constant-diag needs a nonempty even-length diagonal".into(),
                    ));
                }
                Ok(diag.len() / 2)
            }
        }
    }
}
