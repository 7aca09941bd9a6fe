//! Config-driven command line: `run`, `sweep`, and `check`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 a
//! check ran to completion and failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    apriori_bounds, dissipation_all_pairs, refinement_bounded, AprioriReport, DissipationSummary,
    MaximalSlopeOptions,
};
use crate::energy::{
    certify_well_posedness, CertificateProposal, EnergyKind, EnergySpec, WellPosednessCertificate,
};
use crate::error::{Error, Result};
use crate::io;
use crate::metric::{Point, SpaceDescriptor};
use crate::regimes::{
    maximal_slope_pipeline, run_sweep, CouplingLaw, MaximalSlopePipelineReport, PipelineOptions,
    SweepReport,
};
use crate::scheme::{run_scheme, DiscreteTrajectory, SchemeParams, VariationalInterpolant};
use crate::slope::{
    check_condition_h, check_slope_cone, nearest_trap, ConditionHReport, HTolerances,
    SlopeConeReport, SlopeOptions,
};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "maxslope",
    version,
    about = "Minimizing movements along families of energies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scheme once and write trajectory, interpolant, and
    /// dissipation report.
    Run(CommonArgs),
    /// Run a coupled ε-τ sweep.
    Sweep(CommonArgs),
    /// Run one diagnostic and exit 3 if it fails.
    Check(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_sample_budget() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellPosednessConfig {
    pub c_star: Option<f64>,
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default = "default_sample_budget")]
    pub sample_budget: usize,
}

fn default_sweep_tol() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceCurve {
    /// Exact gradient flow of the quadratic Γ-limit from the initial point.
    GammaLimitFlow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub coupling: CouplingLaw,
    pub levels: Vec<f64>,
    pub params: SchemeParams,
    #[serde(default = "default_sweep_tol")]
    pub sweep_tol: f64,
    pub reference: Option<ReferenceCurve>,
}

fn default_residual_tol() -> f64 {
    1e-8
}

fn default_bound_tol() -> f64 {
    1e-8
}

fn default_cone_tol() -> f64 {
    1e-9
}

fn default_probe_radius() -> f64 {
    1.0
}

fn default_random_probes() -> usize {
    1000
}

fn default_intervals() -> usize {
    10
}

fn default_check_tol() -> f64 {
    5e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceRule {
    /// `v_n = limit_v` for every n.
    Constant,
    /// `v_n` = the wiggly local minimum nearest to `limit_v` at `ε_n`.
    NearestTrap,
    /// Explicit points, one per ε.
    Points(Vec<Point>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckConfig {
    Dissipation {
        params: SchemeParams,
        #[serde(default = "default_residual_tol")]
        residual_tol: f64,
        #[serde(default = "default_bound_tol")]
        bound_tol: f64,
    },
    Apriori {
        params: SchemeParams,
        /// Extra time steps for the refinement family; the run at
        /// `params.tau` comes first.
        #[serde(default)]
        refinement_taus: Vec<f64>,
        #[serde(default = "default_bound_tol")]
        bound_tol: f64,
    },
    SlopeCone {
        eps: f64,
        /// Base point; with `at_trap` it is replaced by the nearest trap.
        x: Point,
        #[serde(default)]
        at_trap: bool,
        #[serde(default)]
        probes: Vec<Point>,
        #[serde(default = "default_random_probes")]
        random_probes: usize,
        #[serde(default = "default_probe_radius")]
        probe_radius: f64,
        #[serde(default = "default_cone_tol")]
        cone_tol: f64,
    },
    ConditionH {
        eps_list: Vec<f64>,
        limit_v: Point,
        sequence: SequenceRule,
        #[serde(default)]
        h_tol: Option<f64>,
        #[serde(default)]
        seq_tol: Option<f64>,
    },
    MaximalSlope {
        coupling: CouplingLaw,
        levels: Vec<f64>,
        params: SchemeParams,
        #[serde(default = "default_intervals")]
        intervals: usize,
        #[serde(default = "default_check_tol")]
        check_tol: f64,
        #[serde(default = "default_sweep_tol")]
        sweep_tol: f64,
        #[serde(default)]
        waive_condition_h: bool,
    },
}

impl CheckConfig {
    pub fn name(&self) -> &'static str {
        match self {
            CheckConfig::Dissipation { .. } => "dissipation",
            CheckConfig::Apriori { .. } => "apriori",
            CheckConfig::SlopeCone { .. } => "slope_cone",
            CheckConfig::ConditionH { .. } => "condition_h",
            CheckConfig::MaximalSlope { .. } => "maximal_slope",
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceDescriptor,
    pub energy: EnergyKind,
    pub well_posedness: Option<WellPosednessConfig>,
    pub run: Option<SchemeParams>,
    pub sweep: Option<SweepConfig>,
    pub check: Option<CheckConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        let payloads = [cfg.run.is_some(), cfg.sweep.is_some(), cfg.check.is_some()]
            .iter()
            .filter(|b| **b)
            .count();
        if payloads != 1 {
            return Err(Error::InvalidInput(format!(
                "config must contain exactly one of run, sweep, check (found {payloads})"
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn energy_spec(&self) -> Result<EnergySpec> {
        EnergySpec::new(self.energy.clone(), self.space.clone())
    }
}

/// Failures mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Solver(Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Solver(_) => EXIT_SOLVER,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Solver(e) => write!(f, "solver failure: {e}"),
        }
    }
}

/// Errors caused by the input rather than by the numerics.
fn classify(e: Error) -> Failure {
    match e {
        Error::SchemeStep { .. }
        | Error::BudgetExhausted { .. }
        | Error::Evaluation { .. }
        | Error::InterpolantCoverage(_)
        | Error::Io(_) => Failure::Solver(e),
        _ => Failure::Config(e),
    }
}

/// Certify the coercivity bound for `tau_star` on the ε values in play.
fn certify(
    cfg: &ExperimentConfig,
    spec: &EnergySpec,
    tau_star: f64,
    eps_in_use: &[f64],
) -> Result<WellPosednessCertificate> {
    let wp = cfg.well_posedness.clone().unwrap_or(WellPosednessConfig {
        c_star: None,
        eps_grid: None,
        sample_budget: default_sample_budget(),
    });
    let mut grid = wp.eps_grid.unwrap_or_default();
    grid.extend_from_slice(eps_in_use);
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let c_star = match wp.c_star {
        Some(c) => c,
        None => {
            // the zoo's default C* for this grid, at the requested τ*
            let probe = certify_well_posedness(spec, &grid, 0, None).map_err(|e| match e {
                Error::CapabilityAbsent { .. } => Error::InvalidInput(
                    "well_posedness.c_star is required for custom energies".into(),
                ),
                other => other,
            })?;
            probe.c_star
        }
    };
    certify_well_posedness(
        spec,
        &grid,
        wp.sample_budget,
        Some(CertificateProposal { tau_star, c_star }),
    )
}

struct Ctx {
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub energy_kind: &'static str,
    pub eps: f64,
    pub tau: f64,
    pub steps: usize,
    pub certificate: WellPosednessCertificate,
    pub dissipation: DissipationSummary,
    pub max_endpoint_error: f64,
    pub near_tie_steps: Vec<usize>,
}

fn run_with_interpolant(
    spec: &EnergySpec,
    params: &SchemeParams,
) -> Result<(DiscreteTrajectory, VariationalInterpolant)> {
    let traj = run_scheme(spec, params)?;
    let interp = VariationalInterpolant::build(
        spec,
        &traj,
        &params.step_settings(),
        params.quadrature_nodes_per_step,
    )?;
    Ok((traj, interp))
}

fn cmd_run(cfg: &ExperimentConfig, ctx: &Ctx) -> std::result::Result<u8, Failure> {
    let spec = cfg.energy_spec().map_err(Failure::Config)?;
    let params = cfg.run.as_ref().expect("run payload");
    params.validate(&spec).map_err(Failure::Config)?;
    let cert = certify(cfg, &spec, params.tau_star, &[params.eps]).map_err(Failure::Config)?;
    let (traj, interp) = run_with_interpolant(&spec, params).map_err(classify)?;
    let dissipation =
        dissipation_all_pairs(&traj, &interp, default_bound_tol()).map_err(classify)?;
    let report = RunReport {
        energy_kind: spec.kind_name(),
        eps: traj.eps,
        tau: traj.tau,
        steps: traj.steps(),
        certificate: cert,
        max_endpoint_error: interp.max_endpoint_error(),
        near_tie_steps: traj.near_tie_steps.clone(),
        dissipation,
    };
    write_all(&[
        (ctx.out.join("trajectory.csv"), io::trajectory_csv(&traj)),
        (
            ctx.out.join("interpolant.csv"),
            io::interpolant_csv(&interp),
        ),
        (
            ctx.out.join("dissipation.json"),
            io::to_json(&report).map_err(classify)?,
        ),
    ])?;
    ctx.say(format!(
        "run: {} steps, max |dissipation residual| = {:.3e}, outputs in {}",
        traj.steps(),
        report.dissipation.max_abs_residual,
        ctx.out.display()
    ));
    Ok(0)
}

fn write_all(files: &[(PathBuf, String)]) -> std::result::Result<(), Failure> {
    for (path, text) in files {
        io::write_text(path, text).map_err(Failure::Solver)?;
    }
    Ok(())
}

fn reference_for(
    spec: &EnergySpec,
    initial: &Point,
    which: Option<ReferenceCurve>,
) -> Result<Option<crate::energy::GradientFlow>> {
    match which {
        None => Ok(None),
        Some(ReferenceCurve::GammaLimitFlow) => {
            spec.gamma_limit()?.quadratic_flow(initial).map(Some)
        }
    }
}

fn cmd_sweep(cfg: &ExperimentConfig, ctx: &Ctx) -> std::result::Result<u8, Failure> {
    let spec = cfg.energy_spec().map_err(Failure::Config)?;
    let sweep = cfg.sweep.as_ref().expect("sweep payload");
    sweep
        .coupling
        .validate(&sweep.levels)
        .map_err(Failure::Config)?;
    let eps: Vec<f64> = sweep
        .levels
        .iter()
        .map(|l| sweep.coupling.scales(*l).0)
        .collect();
    certify(cfg, &spec, sweep.params.tau_star, &eps).map_err(Failure::Config)?;
    let flow = reference_for(&spec, &sweep.params.initial_point, sweep.reference)
        .map_err(Failure::Config)?;
    let reference = flow.as_ref().map(|f| move |t: f64| f.at(t));
    let report: SweepReport = run_sweep(
        &spec,
        &sweep.coupling,
        &sweep.levels,
        &sweep.params,
        sweep.sweep_tol,
        reference
            .as_ref()
            .map(|r| r as &(dyn Fn(f64) -> Point + Sync)),
    )
    .map_err(classify)?;
    let mut files = Vec::new();
    for level in &report.levels {
        if let Some(traj) = &level.trajectory {
            files.push((
                ctx.out
                    .join(format!("level_{:02}_trajectory.csv", level.index)),
                io::trajectory_csv(traj),
            ));
        }
    }
    files.push((
        ctx.out.join("sweep_report.json"),
        io::to_json(&report).map_err(classify)?,
    ));
    files.push((
        ctx.out.join("regime_table.csv"),
        io::regime_table_csv(&report),
    ));
    write_all(&files)?;
    ctx.say(format!(
        "sweep: {} levels, successive sup distances {:?}, cauchy = {}",
        report.levels.len(),
        report.pairwise_sup_distances,
        report.cauchy_flag
    ));
    Ok(0)
}

#[derive(Debug, Serialize)]
pub struct DissipationCheckReport {
    pub passed: bool,
    pub residual_tol: f64,
    pub summary: DissipationSummary,
}

#[derive(Debug, Serialize)]
pub struct AprioriCheckReport {
    pub passed: bool,
    pub taus: Vec<f64>,
    pub reports: Vec<AprioriReport>,
    pub refinement_bounded: bool,
    pub worst_refinement_ratio: f64,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum CheckOutcome {
    Dissipation(DissipationCheckReport),
    Apriori(AprioriCheckReport),
    SlopeCone(SlopeConeReport),
    ConditionH(ConditionHReport),
    MaximalSlope(Box<MaximalSlopePipelineReport>),
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        match self {
            CheckOutcome::Dissipation(r) => r.passed,
            CheckOutcome::Apriori(r) => r.passed,
            CheckOutcome::SlopeCone(r) => r.holds,
            CheckOutcome::ConditionH(r) => r.passed,
            CheckOutcome::MaximalSlope(r) => r.check.passed,
        }
    }
}

fn apriori_passed(r: &AprioriReport) -> bool {
    r.dist_bound_ok
        && r.energy_bound_ok
        && r.tilde_closeness_ok
        && r.velocity_energy_ok
        && r.g_energy_ok
        && r.step_bound_ok.unwrap_or(true)
}

/// Run one check from its config. Public so tests can drive it without a
/// process boundary.
pub fn run_check(cfg: &ExperimentConfig) -> std::result::Result<CheckOutcome, Failure> {
    let spec = cfg.energy_spec().map_err(Failure::Config)?;
    let check = cfg.check.as_ref().expect("check payload");
    match check {
        CheckConfig::Dissipation {
            params,
            residual_tol,
            bound_tol,
        } => {
            params.validate(&spec).map_err(Failure::Config)?;
            certify(cfg, &spec, params.tau_star, &[params.eps]).map_err(Failure::Config)?;
            let (traj, interp) = run_with_interpolant(&spec, params).map_err(classify)?;
            let summary = dissipation_all_pairs(&traj, &interp, *bound_tol).map_err(classify)?;
            let passed = summary.identity_ok(*residual_tol)
                && summary.velocity_bound_ok
                && summary.g_bound_ok;
            Ok(CheckOutcome::Dissipation(DissipationCheckReport {
                passed,
                residual_tol: *residual_tol,
                summary,
            }))
        }
        CheckConfig::Apriori {
            params,
            refinement_taus,
            bound_tol,
        } => {
            params.validate(&spec).map_err(Failure::Config)?;
            let cert =
                certify(cfg, &spec, params.tau_star, &[params.eps]).map_err(Failure::Config)?;
            let mut taus = vec![params.tau];
            taus.extend_from_slice(refinement_taus);
            let mut reports = Vec::with_capacity(taus.len());
            for &tau in &taus {
                let p = SchemeParams {
                    tau,
                    ..params.clone()
                };
                p.validate(&spec).map_err(Failure::Config)?;
                let (traj, interp) = run_with_interpolant(&spec, &p).map_err(classify)?;
                reports.push(
                    apriori_bounds(&spec, &traj, &interp, &p, Some(&cert), *bound_tol)
                        .map_err(classify)?,
                );
            }
            let cs: Vec<f64> = reports.iter().map(|r| r.c).collect();
            let (bounded, ratio) = refinement_bounded(&cs);
            let passed = bounded && reports.iter().all(apriori_passed);
            Ok(CheckOutcome::Apriori(AprioriCheckReport {
                passed,
                taus,
                reports,
                refinement_bounded: bounded,
                worst_refinement_ratio: ratio,
            }))
        }
        CheckConfig::SlopeCone {
            eps,
            x,
            at_trap,
            probes,
            random_probes,
            probe_radius,
            cone_tol,
        } => {
            let x = if *at_trap {
                nearest_trap(&spec, *eps, x).map_err(Failure::Config)?
            } else {
                x.clone()
            };
            spec.domain().check(&x).map_err(Failure::Config)?;
            let mut all = probes.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for _ in 0..*random_probes {
                let c: Vec<f64> = x
                    .coords()
                    .iter()
                    .map(|xi| xi + rng.gen_range(-probe_radius..=*probe_radius))
                    .collect();
                all.push(Point::new(c).map_err(Failure::Config)?);
            }
            let report = check_slope_cone(&spec, *eps, &x, &all, *cone_tol).map_err(classify)?;
            Ok(CheckOutcome::SlopeCone(report))
        }
        CheckConfig::ConditionH {
            eps_list,
            limit_v,
            sequence,
            h_tol,
            seq_tol,
        } => {
            let limit = spec.gamma_limit().map_err(Failure::Config)?;
            let points: Vec<Point> = match sequence {
                SequenceRule::Constant => vec![limit_v.clone(); eps_list.len()],
                SequenceRule::NearestTrap => eps_list
                    .iter()
                    .map(|e| nearest_trap(&spec, *e, limit_v))
                    .collect::<Result<_>>()
                    .map_err(Failure::Config)?,
                SequenceRule::Points(p) => {
                    if p.len() != eps_list.len() {
                        return Err(Failure::Config(Error::InvalidInput(
                            "condition_h needs one point per eps".into(),
                        )));
                    }
                    p.clone()
                }
            };
            let seq: Vec<(f64, Point)> = eps_list.iter().cloned().zip(points).collect();
            let defaults = HTolerances::default();
            let tol = HTolerances {
                h_tol: h_tol.unwrap_or(defaults.h_tol),
                seq_tol: seq_tol.unwrap_or(defaults.seq_tol),
            };
            let report =
                check_condition_h(&spec, &limit, &seq, limit_v, tol, &SlopeOptions::default())
                    .map_err(Failure::Config)?;
            Ok(CheckOutcome::ConditionH(report))
        }
        CheckConfig::MaximalSlope {
            coupling,
            levels,
            params,
            intervals,
            check_tol,
            sweep_tol,
            waive_condition_h,
        } => {
            coupling.validate(levels).map_err(Failure::Config)?;
            let eps: Vec<f64> = levels.iter().map(|l| coupling.scales(*l).0).collect();
            certify(cfg, &spec, params.tau_star, &eps).map_err(Failure::Config)?;
            let options = PipelineOptions {
                sweep_tol: *sweep_tol,
                max_slope: MaximalSlopeOptions::uniform(params.horizon, *intervals, *check_tol),
                h_tolerances: HTolerances::default(),
                waive_condition_h: *waive_condition_h,
            };
            let report = maximal_slope_pipeline(&spec, coupling, levels, params, &options)
                .map_err(classify)?;
            if report.sweep.limit_candidate.is_none() {
                return Err(Failure::Solver(Error::InvalidInput(
                    "no sweep level completed".into(),
                )));
            }
            Ok(CheckOutcome::MaximalSlope(Box::new(report)))
        }
    }
}

fn cmd_check(cfg: &ExperimentConfig, ctx: &Ctx) -> std::result::Result<u8, Failure> {
    let name = cfg.check.as_ref().expect("check payload").name();
    let outcome = run_check(cfg)?;
    let path = ctx.out.join(format!("{name}_report.json"));
    io::write_json(&path, &outcome).map_err(Failure::Solver)?;
    let passed = outcome.passed();
    ctx.say(format!(
        "check {name}: {} (report in {})",
        if passed { "passed" } else { "FAILED" },
        path.display()
    ));
    Ok(if passed { 0 } else { EXIT_CHECK_FAILED })
}

fn configure_threads() {
    if let Some(n) = std::env::var("MAXSLOPE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        // a second call in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Parse arguments, run the command, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    configure_threads();
    let (kind, common) = match &cli.command {
        Command::Run(a) => ("run", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Check(a) => ("check", a),
    };
    let cfg = match ExperimentConfig::load(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error in {}: {e}", common.config.display());
            return EXIT_CONFIG;
        }
    };
    let present = match kind {
        "run" => cfg.run.is_some(),
        "sweep" => cfg.sweep.is_some(),
        _ => cfg.check.is_some(),
    };
    if !present {
        eprintln!("configuration error: `{kind}` needs a `{kind}` payload in the config");
        return EXIT_CONFIG;
    }
    let ctx = Ctx {
        out: common.out.clone().unwrap_or_else(|| cfg.output_dir.clone()),
        quiet: common.quiet,
    };
    let result = match kind {
        "run" => cmd_run(&cfg, &ctx),
        "sweep" => cmd_sweep(&cfg, &ctx),
        _ => cmd_check(&cfg, &ctx),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(main_with_args(std::env::args_os()))
}
