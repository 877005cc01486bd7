//! Monte Carlo rejection curves: for each `beta0` on a grid, simulate
//! datasets from a fixed design, run the robust test and tabulate how often
//! it rejects.
//!
//! Each `(beta0 index, replication)` pair is an independent job with its own
//! seeds, so the curve does not depend on how jobs are spread over threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rqlr_core::estimation::{Objective, Restriction};
use rqlr_core::rng::derive_seed;
use rqlr_core::rqlr::{rqlr_test, RqlrOptions};
use rqlr_core::{compute_moments, simulate_dgp, DgpSpec, StructuralParams};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub structural: StructuralParams,
    pub n: usize,
    pub grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Template; the seed is replaced per replication.
    pub options: RqlrOptions,
}

/// One replication at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub beta0: f64,
    pub rep: usize,
    pub qlr: f64,
    pub cv: f64,
    pub reject: bool,
    pub infeasible: bool,
    pub kappa: Option<bool>,
    /// Smallest simulated limit draw behind the critical value.
    pub min_draw: Option<f64>,
    /// Set when the test failed numerically; such replications are left out
    /// of the rejection rate.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub beta0: f64,
    pub rejection_rate: f64,
    /// `sqrt(p (1 - p) / reps)` over the replications that completed.
    pub mc_se: f64,
    pub reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    /// Sorted by `beta0`.
    pub curve: Vec<CurvePoint>,
    /// Grouped by grid point, then by replication.
    pub outcomes: Vec<RepOutcome>,
}

/// Seeds of replication `rep` at grid position `index`: `(data, simulation)`.
pub fn rep_seeds(master: u64, index: usize, rep: usize) -> (u64, u64) {
    let (i, r) = (index as u64, rep as u64);
    (
        derive_seed(master, &[i, r, 0]),
        derive_seed(master, &[i, r, 1]),
    )
}

fn run_rep(spec: &StudySpec, index: usize, beta0: f64, rep: usize) -> CliResult<RepOutcome> {
    let (data_seed, sim_seed) = rep_seeds(spec.seed, index, rep);
    let data = simulate_dgp(&DgpSpec {
        structural: spec.structural.clone(),
        n: spec.n,
        seed: data_seed,
    })?;
    let model = spec.structural.model();
    let obj = Objective::new(&compute_moments(model, &data)?)?;
    let opts = RqlrOptions {
        seed: sim_seed,
        ..spec.options
    };
    let mut out = RepOutcome {
        beta0,
        rep,
        qlr: f64::NAN,
        cv: f64::NAN,
        reject: false,
        infeasible: false,
        kappa: None,
        min_draw: None,
        error: None,
    };
    match rqlr_test(&obj, &Restriction::beta(beta0), &opts) {
        Ok(r) => {
            out.qlr = r.qlr;
            out.cv = r.cv;
            out.reject = r.reject;
            out.infeasible = r.infeasible;
            out.kappa = r.critical_value.as_ref().map(|c| c.kappa);
            out.min_draw = r.critical_value.as_ref().and_then(|c| c.min_draw);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    Ok(out)
}

pub fn run_study(spec: &StudySpec) -> CliResult<Study> {
    if spec.grid.is_empty() {
        return Err(CliError::Config("beta0 grid is empty".into()));
    }
    if spec.reps == 0 {
        return Err(CliError::Config("reps must be positive".into()));
    }
    let mut grid = spec.grid.clone();
    grid.sort_by(f64::total_cmp);
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|i| (0..spec.reps).map(move |r| (i, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(i, r)| run_rep(spec, i, grid[i], r))
        .collect::<CliResult<Vec<_>>>()?;
    let curve = outcomes
        .chunks(spec.reps)
        .zip(&grid)
        .map(|(chunk, &beta0)| {
            let done: Vec<&RepOutcome> = chunk.iter().filter(|o| o.error.is_none()).collect();
            let m = done.len();
            let p = if m == 0 {
                f64::NAN
            } else {
                done.iter().filter(|o| o.reject).count() as f64 / m as f64
            };
            CurvePoint {
                beta0,
                rejection_rate: p,
                mc_se: (p * (1.0 - p) / m as f64).sqrt(),
                reps: m,
                failures: chunk.len() - m,
            }
        })
        .collect();
    Ok(Study { curve, outcomes })
}

pub const CURVE_HEADER: &str = "beta0,rejection_rate,mc_se,reps,failures";

/// CSV with `# `-prefixed comment lines for the audit record, then a header
/// and one row per grid point.
pub fn curve_csv(comments: &[String], curve: &[CurvePoint]) -> String {
    let mut s = String::new();
    for c in comments {
        for line in c.lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
    }
    s.push_str(CURVE_HEADER);
    s.push('\n');
    for p in curve {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            p.beta0, p.rejection_rate, p.mc_se, p.reps, p.failures
        ));
    }
    s
}
