//! The subcommands. Each renders one output record as a string, so the
//! binary only decides where the bytes go.
//!
//! JSON has no infinities; an infeasible null's `qlr` is written as `null`.

use serde::Serialize;

use rqlr_core::estimation::estimate_unrestricted;
use rqlr_core::limitlaw::Case;
use rqlr_core::rqlr::{
    classify, default_ci_grid, invert_ci, limit_quantiles, rqlr_test, CiReport, QuantileTable,
    TestReport,
};
use rqlr_core::{Model, StructuralParams};

use crate::config::{Input, RunConfig};
use crate::error::{CliError, CliResult, EXIT_NUMERICAL};
use crate::study::{curve_csv, run_study, CurvePoint, StudySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Test,
    Ci,
    RejectCurve,
    SimulateQuantiles,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Test => "test",
            Command::Ci => "ci",
            Command::RejectCurve => "reject-curve",
            Command::SimulateQuantiles => "simulate-quantiles",
        }
    }
}

/// Rendered output and the exit status to finish with.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub body: String,
    pub status: u8,
}

#[derive(Serialize)]
struct Record<'a, T> {
    command: &'static str,
    config: &'a RunConfig,
    result: T,
}

fn render<T: Serialize>(cmd: Command, cfg: &RunConfig, result: T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(&Record {
        command: cmd.name(),
        config: cfg,
        result,
    })
    .map_err(|e| CliError::Numerical(format!("cannot serialize the result: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub model: Model,
    pub n: usize,
    pub pi_hat: Vec<f64>,
    pub beta_hat: f64,
    pub structural_hat: Option<StructuralParams>,
    pub q_value: f64,
    pub active_bounds: Vec<usize>,
    pub converged: bool,
    pub multistart_spread: f64,
    /// Identified set for `beta` at `pi_hat`.
    pub cross_section: Option<(f64, f64)>,
}

pub fn estimate(cfg: &RunConfig) -> CliResult<(EstimateReport, bool)> {
    let obj = cfg.objective()?;
    let fit = estimate_unrestricted(&obj)?;
    let cross_section = obj.model.cross_section(&fit.theta_hat.pi).ok();
    let converged = fit.converged;
    Ok((
        EstimateReport {
            model: obj.model,
            n: obj.n,
            pi_hat: fit.theta_hat.pi.iter().copied().collect(),
            beta_hat: fit.theta_hat.beta,
            structural_hat: fit.structural_hat,
            q_value: fit.q_value,
            active_bounds: fit.active_bounds,
            converged,
            multistart_spread: fit.multistart_spread,
            cross_section,
        },
        converged,
    ))
}

pub fn test(cfg: &RunConfig) -> CliResult<TestReport> {
    let restriction = cfg.single_restriction()?;
    let opts = cfg.options(classify(&restriction)?)?;
    Ok(rqlr_test(&cfg.objective()?, &restriction, &opts)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CiOutput {
    pub grid: Vec<f64>,
    pub ci: CiReport,
}

pub fn ci(cfg: &RunConfig) -> CliResult<CiOutput> {
    let obj = cfg.objective()?;
    let grid = match cfg.beta0_grid() {
        Some(g) => g,
        None => default_ci_grid(&obj, cfg.tuning.ci_step)?,
    };
    let ci = invert_ci(&obj, &grid, &cfg.options(Case::W1)?)?;
    Ok(CiOutput { grid, ci })
}

pub fn simulate_quantiles(cfg: &RunConfig) -> CliResult<QuantileTable> {
    let restriction = cfg.single_restriction()?;
    let opts = cfg.options(classify(&restriction)?)?;
    Ok(limit_quantiles(&cfg.objective()?, &restriction, &opts)?)
}

pub fn study_spec(cfg: &RunConfig) -> CliResult<StudySpec> {
    let reps = cfg.study_reps()?;
    let Input::Dgp { structural, n, .. } = &cfg.input else {
        return Err(CliError::Config(
            "the rejection curve needs a simulated design (--n or `input.dgp`), not a CSV".into(),
        ));
    };
    let grid = match (cfg.beta0_grid(), cfg.restriction.beta0) {
        (Some(g), _) => g,
        (None, Some(b)) => vec![b],
        (None, None) => {
            return Err(CliError::Config(
                "the rejection curve needs --beta0-grid".into(),
            ))
        }
    };
    Ok(StudySpec {
        structural: structural.clone(),
        n: *n,
        grid,
        reps,
        seed: cfg.seed,
        options: cfg.options(Case::W1)?,
    })
}

pub fn reject_curve(cfg: &RunConfig) -> CliResult<Vec<CurvePoint>> {
    Ok(run_study(&study_spec(cfg)?)?.curve)
}

/// Runs `cmd` and renders its single output record.
pub fn run(cmd: Command, cfg: &RunConfig) -> CliResult<Output> {
    let ok = |body| Output { body, status: 0 };
    match cmd {
        Command::Estimate => {
            let (report, converged) = estimate(cfg)?;
            let body = render(cmd, cfg, report)?;
            Ok(Output {
                body,
                status: if converged { 0 } else { EXIT_NUMERICAL },
            })
        }
        Command::Test => Ok(ok(render(cmd, cfg, test(cfg)?)?)),
        Command::Ci => Ok(ok(render(cmd, cfg, ci(cfg)?)?)),
        Command::SimulateQuantiles => Ok(ok(render(cmd, cfg, simulate_quantiles(cfg)?)?)),
        Command::RejectCurve => {
            let curve = reject_curve(cfg)?;
            let config = serde_json::to_string(cfg)
                .map_err(|e| CliError::Numerical(format!("cannot serialize the config: {e}")))?;
            Ok(ok(curve_csv(
                &[
                    format!("command: {}", cmd.name()),
                    format!("config: {config}"),
                ],
                &curve,
            )))
        }
    }
}
