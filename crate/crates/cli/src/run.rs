//! Command dispatch and artifact writing.
//!
//! Every run produces `manifest.json` (full config echo, seed, version, wall
//! time, output list) next to the command's own artifacts; a rerun of the
//! same config on the same build reproduces every CSV byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use ompath::kam::{torus_persistence_scan, PersistenceReport, ScanOptions};
use ompath::noise::{
    check_chart_witness, check_ellipticity, check_frobenius, check_hamiltonian_columns,
};
use ompath::phase::DomainBox;
use ompath::prob::{ldp_curve, tube_probability_mc, LdpCurve, MCEstimate, TubeSpec};
use ompath::sde::{ensemble, NoiseConfig, SdeOptions, SdeScheme, TrajectoryOutcome};
use ompath::variational::{
    om_action, rate_function, solve_mpp, verify_flow_coincidence, MppOptions,
};
use ompath::PhasePoint;

use crate::config::{
    CheckConditionsOptions, KamScanOptions, LdpOptions, MppOptionsConfig, OmEvalOptions, RunConfig,
    SimulateOptions, TubeOptions,
};

#[derive(Debug)]
pub enum RunError {
    /// Bad configuration; exit code 2.
    Validation(String),
    /// A module failed while running; exit code 3.
    Numerical(ompath::Error),
    /// Monte Carlo underflow advisory escalated; exit code 4.
    Underflow(String),
    /// Filesystem trouble; exit code 3.
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(msg) => write!(f, "validation: {msg}"),
            RunError::Numerical(e) => write!(f, "numerical: {e}"),
            RunError::Underflow(msg) => write!(f, "mc-underflow: {msg}"),
            RunError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) | RunError::Io(_) => 3,
            RunError::Underflow(_) => 4,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    crate_version: &'static str,
    seed: Option<u64>,
    threads: Option<usize>,
    wall_time_seconds: f64,
    outputs: &'a [String],
    advisory: Option<&'a str>,
    config: &'a RunConfig,
}

pub fn execute(config: &RunConfig, threads: Option<usize>) -> Result<(), RunError> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let started = Instant::now();

    let (outputs, advisory) = match config.command.as_str() {
        "simulate" => run_simulate(config)?,
        "om-eval" => run_om_eval(config)?,
        "mpp" => run_mpp(config)?,
        "tube" => run_tube(config)?,
        "ldp" => run_ldp(config)?,
        "kam-scan" => run_kam_scan(config)?,
        "check-conditions" => run_check_conditions(config)?,
        other => return Err(RunError::Validation(format!("unknown command {other:?}"))),
    };

    let manifest = Manifest {
        command: &config.command,
        crate_version: env!("CARGO_PKG_VERSION"),
        seed: config.noise.as_ref().map(|n| n.seed),
        threads,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs: &outputs,
        advisory: advisory.as_deref(),
        config,
    };
    write_json(&config.output_dir.join("manifest.json"), &manifest)?;

    match advisory {
        Some(msg) => Err(RunError::Underflow(msg)),
        None => Ok(()),
    }
}

fn sde_options(config: &RunConfig) -> SdeOptions {
    SdeOptions {
        scheme: config.scheme.unwrap_or(SdeScheme::ItoEulerMaruyama),
        domain: config.domain.clone(),
        ..Default::default()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| RunError::Validation(format!("serialization: {e}")))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

type CommandOutput = (Vec<String>, Option<String>);

fn run_simulate(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: SimulateOptions = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let noise: &NoiseConfig = config.noise()?;
    let x0 = starting_point(config)?;
    let runs = ensemble(
        sys.as_ref(),
        field.as_ref(),
        &x0,
        config.grid.t_max,
        config.grid.n_steps,
        noise,
        &sde_options(config),
    )
    .map_err(RunError::Numerical)?;

    let mut outputs = Vec::new();
    #[derive(Serialize)]
    struct Outcome {
        replicate: u64,
        status: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        exit_step: Option<usize>,
    }
    let mut outcomes = Vec::with_capacity(runs.len());

    if opts.single_file {
        let name = "trajectories.csv".to_string();
        let mut file = fs::File::create(config.output_dir.join(&name))?;
        let dim = 2 * sys.dof();
        write!(file, "replicate,t")?;
        for i in 1..=dim {
            write!(file, ",x{i}")?;
        }
        writeln!(file)?;
        for (j, run) in runs.iter().enumerate() {
            if let TrajectoryOutcome::Complete(path) = run {
                for (k, node) in path.nodes().iter().enumerate() {
                    write!(file, "{j},{}", path.time(k))?;
                    for c in node.iter() {
                        write!(file, ",{c}")?;
                    }
                    writeln!(file)?;
                }
            }
        }
        outputs.push(name);
    }
    for (j, run) in runs.iter().enumerate() {
        match run {
            TrajectoryOutcome::Complete(path) => {
                outcomes.push(Outcome {
                    replicate: j as u64,
                    status: "complete",
                    exit_step: None,
                });
                if !opts.single_file {
                    let name = format!("trajectory_{j:04}.csv");
                    let file = fs::File::create(config.output_dir.join(&name))?;
                    path.write_csv(std::io::BufWriter::new(file))
                        .map_err(RunError::Numerical)?;
                    outputs.push(name);
                }
            }
            TrajectoryOutcome::DomainExit { exit_step } => outcomes.push(Outcome {
                replicate: j as u64,
                status: "domain-exit",
                exit_step: Some(*exit_step),
            }),
        }
    }
    write_json(&config.output_dir.join("outcomes.json"), &outcomes)?;
    outputs.push("outcomes.json".into());
    Ok((outputs, None))
}

fn starting_point(config: &RunConfig) -> Result<PhasePoint, RunError> {
    // simulate starts from options.x0 when given, else the phase-space origin
    #[derive(serde::Deserialize)]
    struct StartOnly {
        #[serde(default)]
        x0: Option<Vec<f64>>,
    }
    let start: StartOnly = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    match start.x0 {
        Some(values) => RunConfig::phase_point(&values),
        None => RunConfig::phase_point(&vec![0.0; 2 * sys.dof()]),
    }
}

fn run_om_eval(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: OmEvalOptions = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let path = config.resolve_path(&opts.path)?;
    let action = om_action(sys.as_ref(), field.as_ref(), &path).map_err(RunError::Numerical)?;
    let x0 = PhasePoint::new(path.start().clone()).map_err(RunError::Numerical)?;
    let rate =
        rate_function(sys.as_ref(), field.as_ref(), &path, &x0).map_err(RunError::Numerical)?;

    #[derive(Serialize)]
    struct ActionReport<'a> {
        action: &'a ompath::variational::ActionBreakdown,
        rate: &'a ompath::variational::RateValue,
    }
    write_json(
        &config.output_dir.join("action.json"),
        &ActionReport {
            action: &action,
            rate: &rate,
        },
    )?;
    Ok((vec!["action.json".into()], None))
}

fn run_mpp(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: MppOptionsConfig = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let x0 = RunConfig::phase_point(&opts.x0)?;
    let xt = match &opts.xt {
        Some(values) => RunConfig::phase_point(values)?,
        None => {
            let flow = ompath::hamiltonian::deterministic_flow(
                sys.as_ref(),
                &x0,
                config.grid.t_max,
                config.grid.n_steps,
            )
            .map_err(RunError::Numerical)?;
            PhasePoint::new(flow.end().clone()).map_err(RunError::Numerical)?
        }
    };
    let init = match &opts.init_csv {
        Some(file) => Some(
            ompath::DiscretePath::read_csv(std::io::BufReader::new(fs::File::open(file)?))
                .map_err(RunError::Numerical)?,
        ),
        None => None,
    };
    let solver_opts = MppOptions {
        grad_tol: opts.grad_tol,
        max_iterations: opts.max_iterations,
        ..Default::default()
    };
    let solution = solve_mpp(
        sys.as_ref(),
        field.as_ref(),
        &x0,
        &xt,
        config.grid.t_max,
        config.grid.n_steps,
        init.as_ref(),
        &solver_opts,
    )
    .map_err(RunError::Numerical)?;

    let path_name = "mpp_path.csv".to_string();
    let file = fs::File::create(config.output_dir.join(&path_name))?;
    solution
        .path
        .write_csv(std::io::BufWriter::new(file))
        .map_err(RunError::Numerical)?;

    let coincidence = if opts.verify_flow_coincidence {
        Some(
            verify_flow_coincidence(
                sys.as_ref(),
                field.as_ref(),
                &x0,
                config.grid.t_max,
                config.grid.n_steps,
                &solver_opts,
            )
            .map_err(RunError::Numerical)?,
        )
    } else {
        None
    };

    #[derive(Serialize)]
    struct MppReport<'a> {
        converged: bool,
        iterations: usize,
        grad_norm: f64,
        action: &'a ompath::variational::ActionBreakdown,
        #[serde(skip_serializing_if = "Option::is_none")]
        flow_coincidence: Option<&'a ompath::variational::FlowCoincidenceReport>,
    }
    write_json(
        &config.output_dir.join("mpp_report.json"),
        &MppReport {
            converged: solution.converged,
            iterations: solution.iterations,
            grad_norm: solution.grad_norm,
            action: &solution.action,
            flow_coincidence: coincidence.as_ref(),
        },
    )?;
    Ok((vec![path_name, "mpp_report.json".into()], None))
}

fn write_estimate_csv(path: &Path, estimate: &MCEstimate) -> Result<(), RunError> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "gamma,p_hat,se,hits,replicates,seed")?;
    writeln!(
        file,
        "{},{},{},{},{},{}",
        estimate.gamma,
        estimate.p_hat,
        estimate.std_err,
        estimate.hits,
        estimate.replicates,
        estimate.seed
    )?;
    Ok(())
}

fn run_tube(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: TubeOptions = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let reference = config.resolve_path(&opts.reference)?;
    let tube = TubeSpec::new(reference, opts.epsilon).map_err(RunError::Numerical)?;
    let estimate = tube_probability_mc(
        sys.as_ref(),
        field.as_ref(),
        &tube,
        config.noise()?,
        &sde_options(config),
    )
    .map_err(RunError::Numerical)?;

    write_json(&config.output_dir.join("estimate.json"), &estimate)?;
    write_estimate_csv(&config.output_dir.join("estimate.csv"), &estimate)?;
    let advisory = estimate.is_underflow().then(|| {
        format!(
            "zero hits in {} replicates; the log of this estimate is unusable — widen epsilon or raise replicates",
            estimate.replicates
        )
    });
    Ok((
        vec!["estimate.json".into(), "estimate.csv".into()],
        advisory,
    ))
}

fn write_curve_csv(path: &Path, curve: &LdpCurve) -> Result<(), RunError> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "gamma,p_hat,se,g2logp,lo,hi")?;
    for point in &curve.points {
        write!(
            file,
            "{},{},{}",
            point.gamma, point.estimate.p_hat, point.estimate.std_err
        )?;
        match (point.scaled_log_p, point.scaled_log_se) {
            (Some(v), Some(se)) => writeln!(file, ",{v},{},{}", v - se, v + se)?,
            _ => writeln!(file, ",,,")?,
        }
    }
    Ok(())
}

fn run_ldp(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: LdpOptions = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let reference = config.resolve_path(&opts.reference)?;
    let tube = TubeSpec::new(reference, opts.epsilon).map_err(RunError::Numerical)?;
    let noise = config.noise()?;
    let curve = match ldp_curve(
        sys.as_ref(),
        field.as_ref(),
        &tube,
        &opts.gammas,
        noise.replicates,
        noise.seed,
        &sde_options(config),
    ) {
        Ok(curve) => curve,
        Err(e @ ompath::Error::EmptyCurve(_)) => {
            return Err(RunError::Underflow(e.to_string()));
        }
        Err(e) => return Err(RunError::Numerical(e)),
    };

    write_json(&config.output_dir.join("curve.json"), &curve)?;
    write_curve_csv(&config.output_dir.join("curve.csv"), &curve)?;
    let unusable = curve.points.iter().filter(|p| !p.usable).count();
    let advisory = (unusable > 0).then(|| {
        format!("{unusable} curve point(s) below the usable-hit threshold; widen epsilon or raise replicates")
    });
    Ok((vec!["curve.json".into(), "curve.csv".into()], advisory))
}

fn write_persistence_csv(
    path: &Path,
    report: &PersistenceReport,
    dof: usize,
) -> Result<(), RunError> {
    let mut file = fs::File::create(path)?;
    write!(file, "eta")?;
    for j in 1..=dof {
        write!(file, ",i0_{j}")?;
    }
    for j in 1..=dof {
        write!(file, ",omega_{j}")?;
    }
    writeln!(file, ",drift,osc,survived")?;
    for row in &report.rows {
        write!(file, "{}", row.eta)?;
        for v in &row.initial_action {
            write!(file, ",{v}")?;
        }
        match &row.omega {
            Some(omega) => {
                for v in omega {
                    write!(file, ",{v}")?;
                }
            }
            None => {
                for _ in 0..dof {
                    write!(file, ",")?;
                }
            }
        }
        match (row.drift, row.oscillation, row.survived) {
            (Some(d), Some(o), Some(s)) => writeln!(file, ",{d},{o},{}", s as u8)?,
            _ => writeln!(file, ",,{},", row.oscillation.unwrap_or(f64::NAN))?,
        }
    }
    Ok(())
}

fn run_kam_scan(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: KamScanOptions = config.parsed_options()?;
    let sys = config
        .system
        .build_nearly_integrable()
        .map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let actions: Vec<_> = opts
        .initial_actions
        .iter()
        .map(|a| RunConfig::action_vector(a))
        .collect();
    let scan_opts = ScanOptions {
        drift_tol: opts.drift_tol,
        oscillation_rel_tol: opts.oscillation_rel_tol,
        ..Default::default()
    };
    let report = torus_persistence_scan(
        sys.as_ref(),
        field.as_ref(),
        &opts.etas,
        &actions,
        config.grid.t_max,
        config.grid.n_steps,
        &opts.params,
        &scan_opts,
    )
    .map_err(RunError::Numerical)?;

    write_json(&config.output_dir.join("persistence.json"), &report)?;
    write_persistence_csv(
        &config.output_dir.join("persistence.csv"),
        &report,
        sys.dof(),
    )?;
    Ok((
        vec!["persistence.json".into(), "persistence.csv".into()],
        None,
    ))
}

fn run_check_conditions(config: &RunConfig) -> Result<CommandOutput, RunError> {
    let opts: CheckConditionsOptions = config.parsed_options()?;
    let sys = config.system.build().map_err(RunError::Numerical)?;
    let field = config.field.build().map_err(RunError::Numerical)?;
    let domain = opts
        .domain
        .clone()
        .unwrap_or_else(|| DomainBox::centered_cube(2 * sys.dof(), 1.0));

    let reports = vec![
        check_ellipticity(field.as_ref(), &domain, opts.samples).map_err(RunError::Numerical)?,
        check_frobenius(field.as_ref(), &domain, opts.samples).map_err(RunError::Numerical)?,
        check_chart_witness(field.as_ref(), opts.samples).map_err(RunError::Numerical)?,
        check_hamiltonian_columns(field.as_ref(), &domain, opts.samples)
            .map_err(RunError::Numerical)?,
    ];
    write_json(&config.output_dir.join("conditions.json"), &reports)?;
    Ok((vec!["conditions.json".into()], None))
}
