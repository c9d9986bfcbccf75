//! Run configuration: one JSON document per run, archived verbatim into the
//! manifest so every artifact stays recomputable.

use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use ompath::hamiltonian::FlowScheme;
use ompath::kam::KamParams;
use ompath::phase::DomainBox;
use ompath::registry::{FieldSpec, SystemSpec};
use ompath::sde::{NoiseConfig, SdeScheme};
use ompath::DiscretePath;
use ompath::PhasePoint;

use crate::RunError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub t_max: f64,
    pub n_steps: usize,
}

/// Where a reference path comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PathSource {
    /// Deterministic flow from `x0` on the run's grid.
    Flow { x0: Vec<f64> },
    /// Constant path sitting at `at`.
    Constant { at: Vec<f64> },
    /// A previously written path CSV.
    Csv { file: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// One of: simulate, om-eval, mpp, tube, ldp, kam-scan, check-conditions.
    pub command: String,
    pub system: SystemSpec,
    pub field: FieldSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    /// Integration scheme for stochastic commands.
    #[serde(default)]
    pub scheme: Option<SdeScheme>,
    /// Bounded domain; leaving it is a tagged exit (tube estimators count a miss).
    #[serde(default)]
    pub domain: Option<DomainBox>,
    /// Command-specific options, parsed per command.
    #[serde(default)]
    pub options: serde_json::Value,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateOptions {
    /// One long-format file with a replicate column instead of per-replicate files.
    #[serde(default)]
    pub single_file: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmEvalOptions {
    pub path: PathSource,
}

fn default_grad_tol() -> f64 {
    1e-8
}

fn default_max_iterations() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MppOptionsConfig {
    pub x0: Vec<f64>,
    /// Terminal point; omitted means the deterministic flow endpoint.
    #[serde(default)]
    pub xt: Option<Vec<f64>>,
    #[serde(default)]
    pub init_csv: Option<PathBuf>,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Also run the flow-coincidence verification and include its report.
    #[serde(default)]
    pub verify_flow_coincidence: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TubeOptions {
    pub reference: PathSource,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdpOptions {
    pub reference: PathSource,
    pub epsilon: f64,
    /// Strictly descending noise intensities.
    pub gammas: Vec<f64>,
}

fn default_drift_tol() -> f64 {
    1e-3
}

fn default_osc_rel_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KamScanOptions {
    pub etas: Vec<f64>,
    pub initial_actions: Vec<Vec<f64>>,
    pub params: KamParams,
    #[serde(default = "default_drift_tol")]
    pub drift_tol: f64,
    #[serde(default = "default_osc_rel_tol")]
    pub oscillation_rel_tol: f64,
}

fn default_samples() -> usize {
    ompath::noise::DEFAULT_CONDITION_SAMPLES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckConditionsOptions {
    /// Sampling box; omitted means a centered cube of half-width 1.
    #[serde(default)]
    pub domain: Option<DomainBox>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

pub const COMMANDS: &[&str] = &[
    "simulate",
    "om-eval",
    "mpp",
    "tube",
    "ldp",
    "kam-scan",
    "check-conditions",
];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| RunError::Validation(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural checks that do not require running anything: registry ids
    /// exist, dimensions agree, numeric parameters satisfy the module
    /// preconditions.
    pub fn validate(&self) -> Result<(), RunError> {
        if !COMMANDS.contains(&self.command.as_str()) {
            return Err(RunError::Validation(format!(
                "command: unknown command {:?}; expected one of {:?}",
                self.command, COMMANDS
            )));
        }
        let sys = self
            .system
            .build()
            .map_err(|e| RunError::Validation(format!("system: {e}")))?;
        let field_dof = self
            .field
            .dof()
            .map_err(|e| RunError::Validation(format!("field: {e}")))?;
        self.field
            .build()
            .map_err(|e| RunError::Validation(format!("field: {e}")))?;
        if sys.dof() != field_dof {
            return Err(RunError::Validation(format!(
                "field: degrees of freedom {} do not match the system's {}",
                field_dof,
                sys.dof()
            )));
        }
        if !(self.grid.t_max > 0.0) || !self.grid.t_max.is_finite() {
            return Err(RunError::Validation(
                "grid.t_max: must be positive and finite".into(),
            ));
        }
        if self.grid.n_steps < 2 {
            return Err(RunError::Validation(
                "grid.n_steps: must be at least 2".into(),
            ));
        }
        if let Some(noise) = &self.noise {
            noise
                .validate()
                .map_err(|e| RunError::Validation(format!("noise: {e}")))?;
        }
        if let Some(domain) = &self.domain {
            if domain.dim() != 2 * sys.dof() {
                return Err(RunError::Validation(format!(
                    "domain: dimension {} does not match phase space 2n = {}",
                    domain.dim(),
                    2 * sys.dof()
                )));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(RunError::Validation("output_dir: must not be empty".into()));
        }

        // command-specific option parsing doubles as validation
        match self.command.as_str() {
            "simulate" => {
                self.parsed_options::<SimulateOptions>()?;
                self.require_noise()?;
            }
            "om-eval" => {
                self.parsed_options::<OmEvalOptions>()?;
            }
            "mpp" => {
                let opts = self.parsed_options::<MppOptionsConfig>()?;
                let dim = 2 * sys.dof();
                if opts.x0.len() != dim {
                    return Err(RunError::Validation(format!(
                        "options.x0: length {} does not match 2n = {dim}",
                        opts.x0.len()
                    )));
                }
                if let Some(xt) = &opts.xt {
                    if xt.len() != dim {
                        return Err(RunError::Validation(format!(
                            "options.xt: length {} does not match 2n = {dim}",
                            xt.len()
                        )));
                    }
                }
                if !(opts.grad_tol > 0.0) {
                    return Err(RunError::Validation(
                        "options.grad_tol: must be positive".into(),
                    ));
                }
            }
            "tube" => {
                let opts = self.parsed_options::<TubeOptions>()?;
                if !(opts.epsilon > 0.0) {
                    return Err(RunError::Validation(
                        "options.epsilon: must be positive".into(),
                    ));
                }
                self.require_noise()?;
            }
            "ldp" => {
                let opts = self.parsed_options::<LdpOptions>()?;
                if !(opts.epsilon > 0.0) {
                    return Err(RunError::Validation(
                        "options.epsilon: must be positive".into(),
                    ));
                }
                if opts.gammas.is_empty() || opts.gammas.iter().any(|&g| !(g > 0.0)) {
                    return Err(RunError::Validation(
                        "options.gammas: need a nonempty positive list".into(),
                    ));
                }
                if opts.gammas.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(RunError::Validation(
                        "options.gammas: must be strictly descending".into(),
                    ));
                }
                self.require_noise()?;
            }
            "kam-scan" => {
                let opts = self.parsed_options::<KamScanOptions>()?;
                self.system
                    .build_nearly_integrable()
                    .map_err(|e| RunError::Validation(format!("system: {e}")))?;
                opts.params
                    .validate_for_dof(sys.dof())
                    .map_err(|e| RunError::Validation(format!("options.params: {e}")))?;
                if opts.etas.is_empty() || opts.initial_actions.is_empty() {
                    return Err(RunError::Validation(
                        "options: need at least one eta and one initial action".into(),
                    ));
                }
                for (i, a) in opts.initial_actions.iter().enumerate() {
                    if a.len() != sys.dof() {
                        return Err(RunError::Validation(format!(
                            "options.initial_actions[{i}]: length {} does not match n = {}",
                            a.len(),
                            sys.dof()
                        )));
                    }
                }
            }
            "check-conditions" => {
                let opts = self.parsed_options::<CheckConditionsOptions>()?;
                if opts.samples == 0 {
                    return Err(RunError::Validation(
                        "options.samples: must be positive".into(),
                    ));
                }
                if let Some(domain) = &opts.domain {
                    if domain.dim() != 2 * sys.dof() {
                        return Err(RunError::Validation(
                            "options.domain: dimension does not match phase space".into(),
                        ));
                    }
                }
            }
            _ => unreachable!("command list checked above"),
        }
        Ok(())
    }

    pub fn parsed_options<T: serde::de::DeserializeOwned>(&self) -> Result<T, RunError> {
        serde_json::from_value(self.options.clone())
            .map_err(|e| RunError::Validation(format!("options: {e}")))
    }

    fn require_noise(&self) -> Result<&NoiseConfig, RunError> {
        self.noise.as_ref().ok_or_else(|| {
            RunError::Validation(format!("noise: required by command {:?}", self.command))
        })
    }

    pub fn noise(&self) -> Result<&NoiseConfig, RunError> {
        self.require_noise()
    }

    /// Materializes a reference path on the run's grid.
    pub fn resolve_path(&self, source: &PathSource) -> Result<DiscretePath, RunError> {
        let sys = self.system.build().map_err(RunError::Numerical)?;
        match source {
            PathSource::Flow { x0 } => {
                let x0 = PhasePoint::from_slice(x0).map_err(RunError::Numerical)?;
                ompath::hamiltonian::deterministic_flow_with(
                    sys.as_ref(),
                    &x0,
                    self.grid.t_max,
                    self.grid.n_steps,
                    &ompath::hamiltonian::FlowOptions {
                        scheme: FlowScheme::Auto,
                        ..Default::default()
                    },
                )
                .map_err(RunError::Numerical)
            }
            PathSource::Constant { at } => {
                let at = PhasePoint::from_slice(at).map_err(RunError::Numerical)?;
                DiscretePath::constant(&at, self.grid.t_max, self.grid.n_steps)
                    .map_err(RunError::Numerical)
            }
            PathSource::Csv { file } => {
                let reader = std::io::BufReader::new(std::fs::File::open(file).map_err(|e| {
                    RunError::Validation(format!("options.path: {}: {e}", file.display()))
                })?);
                DiscretePath::read_csv(reader).map_err(RunError::Numerical)
            }
        }
    }

    pub fn phase_point(values: &[f64]) -> Result<PhasePoint, RunError> {
        PhasePoint::from_slice(values).map_err(RunError::Numerical)
    }

    pub fn action_vector(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }
}
