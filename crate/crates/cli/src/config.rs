//! Run configuration: a TOML file whose values are overridden by flags.
//!
//! A [`RunConfig`] is the fully resolved form. It is what every output file
//! embeds, so a run can be repeated from its own output.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rqlr_core::estimation::{Objective, Restriction};
use rqlr_core::limitlaw::{Case, BETA_GRID_POINTS};
use rqlr_core::moments::read_csv;
use rqlr_core::rqlr::{AlphaBudget, RqlrOptions, DEFAULT_CI_STEP, DEFAULT_DRAWS};
use rqlr_core::{compute_moments, simulate_dgp, DgpSpec, Model, StructuralParams};

use crate::error::{CliError, CliResult};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BETA_STAR_POINTS: usize = 11;
/// Smallest replication count accepted by the rejection-curve study.
pub const MIN_REPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    OneFactor,
    TwoFactor,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::OneFactor => Model::OneFactor,
            ModelArg::TwoFactor => Model::TwoFactor,
        }
    }
}

/// Flags shared by every subcommand. Anything set here wins over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV file with a header row; one column per measure.
    #[arg(long, conflicts_with = "n")]
    pub data: Option<PathBuf>,
    /// Simulate the benchmark design (or the file's `[input.dgp]`) with this many observations.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub beta0: Option<f64>,
    /// Either `lo:hi:step` or a comma-separated list.
    #[arg(long, value_parser = parse_grid_arg)]
    pub beta0_grid: Option<Grid>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo draws per limit quantile.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Replications per grid point in the rejection-curve study.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use `max(q_S, sup q_L)` instead of the identification selector.
    #[arg(long)]
    pub max_rule: bool,
}

/// A `beta0` grid given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_grid_arg(s: &str) -> Result<Grid, String> {
    parse_grid(s).map(Grid)
}

/// Parses `lo:hi:step` (endpoints included) or `a,b,c`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{t}` is not a number"))
    };
    let grid = if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(num).collect::<Result<_, _>>()?;
        let [lo, hi, step] = parts[..] else {
            return Err("range grids are written lo:hi:step".into());
        };
        if !(step > 0.0) || !(hi >= lo) {
            return Err("range grid needs step > 0 and hi >= lo".into());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| lo + i as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err("empty grid".into());
    }
    Ok(grid)
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<Model>,
    pub alpha: Option<f64>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub max_rule: Option<bool>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub input: InputFile,
    #[serde(default)]
    pub restriction: RestrictionConfig,
    #[serde(default)]
    pub budget: BudgetOverrides,
    #[serde(default)]
    pub tuning: TuningFile,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub csv: Option<PathBuf>,
    pub columns: Option<Vec<String>>,
    pub dgp: Option<DgpFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpFile {
    pub n: usize,
    /// Defaults to the master seed.
    pub seed: Option<u64>,
    /// Defaults to the benchmark design of the model.
    pub structural: Option<StructuralParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionConfig {
    pub beta0: Option<f64>,
    pub beta0_grid: Option<Vec<f64>>,
    /// Rows of `R1` in `R1 pi = r0`.
    pub pi_rows: Option<Vec<Vec<f64>>>,
    /// `r0`.
    pub pi_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverrides {
    pub alpha_c: Option<f64>,
    pub alpha_psi: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningFile {
    pub pi_grid_size: Option<usize>,
    pub beta_grid_points: Option<usize>,
    pub beta_star_points: Option<usize>,
    pub refine: Option<bool>,
    pub ci_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    pub pi_grid_size: usize,
    pub beta_grid_points: usize,
    pub beta_star_points: usize,
    pub refine: bool,
    pub ci_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Input {
    Csv {
        path: PathBuf,
        /// Empty selects every column in file order.
        columns: Vec<String>,
    },
    Dgp {
        structural: StructuralParams,
        n: usize,
        seed: u64,
    },
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: Model,
    pub input: Input,
    pub restriction: RestrictionConfig,
    pub alpha: f64,
    pub budget: BudgetOverrides,
    pub draws: usize,
    pub seed: u64,
    pub reps: Option<usize>,
    pub max_rule: bool,
    pub tuning: Tuning,
    /// Not part of the audit record, so the output location never changes
    /// the output bytes.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut file: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are relative to the config file.
        if let (Some(csv), Some(dir)) = (file.input.csv.as_mut(), path.parent()) {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
        Ok(file)
    }
}

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

impl RunConfig {
    /// Reads `flags.config` if given and applies the flags on top.
    pub fn from_flags(flags: &Flags) -> CliResult<Self> {
        let file = match &flags.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Self::resolve(file, flags)
    }

    pub fn resolve(file: ConfigFile, flags: &Flags) -> CliResult<Self> {
        let Some(model) = flags.model.map(Model::from).or(file.model) else {
            return config_err("no model given (--model or `model` in the config file)");
        };
        let seed = flags.seed.or(file.seed).unwrap_or(0);

        let input = if let Some(path) = &flags.data {
            Input::Csv {
                path: path.clone(),
                columns: file.input.columns.clone().unwrap_or_default(),
            }
        } else if let Some(n) = flags.n {
            let dgp = file.input.dgp.as_ref();
            Input::Dgp {
                structural: dgp
                    .and_then(|d| d.structural.clone())
                    .unwrap_or_else(|| StructuralParams::benchmark(model)),
                n,
                seed: dgp.and_then(|d| d.seed).unwrap_or(seed),
            }
        } else {
            match (&file.input.csv, &file.input.dgp) {
                (Some(_), Some(_)) => {
                    return config_err("exactly one input source: both `csv` and `dgp` are set")
                }
                (None, None) => {
                    return config_err("no input source (--data, --n, `input.csv` or `input.dgp`)")
                }
                (Some(path), None) => Input::Csv {
                    path: path.clone(),
                    columns: file.input.columns.clone().unwrap_or_default(),
                },
                (None, Some(d)) => Input::Dgp {
                    structural: d
                        .structural
                        .clone()
                        .unwrap_or_else(|| StructuralParams::benchmark(model)),
                    n: d.n,
                    seed: d.seed.unwrap_or(seed),
                },
            }
        };
        if let Input::Dgp { structural, .. } = &input {
            if structural.model() != model {
                return config_err(format!(
                    "DGP design is {} but the model is {}",
                    structural.model().name(),
                    model.name()
                ));
            }
            structural.validate()?;
        }

        let mut restriction = file.restriction.clone();
        if let Some(b) = flags.beta0 {
            restriction.beta0 = Some(b);
        }
        if let Some(g) = &flags.beta0_grid {
            restriction.beta0_grid = Some(g.0.clone());
        }

        let t = &file.tuning;
        let tuning = Tuning {
            pi_grid_size: t.pi_grid_size.unwrap_or(match model {
                Model::OneFactor => 21,
                Model::TwoFactor => 9,
            }),
            beta_grid_points: t.beta_grid_points.unwrap_or(BETA_GRID_POINTS),
            beta_star_points: t.beta_star_points.unwrap_or(DEFAULT_BETA_STAR_POINTS),
            refine: t.refine.unwrap_or(true),
            ci_step: t.ci_step.unwrap_or(DEFAULT_CI_STEP),
        };

        let cfg = RunConfig {
            model,
            input,
            restriction,
            alpha: flags.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            budget: file.budget,
            draws: flags.draws.or(file.draws).unwrap_or(DEFAULT_DRAWS),
            seed,
            reps: flags.reps.or(file.reps),
            max_rule: flags.max_rule || file.max_rule.unwrap_or(false),
            tuning,
            out: flags.out.clone().or(file.out),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return config_err(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.draws == 0 {
            return config_err("draws must be positive");
        }
        if let Input::Dgp { n, .. } = self.input {
            if n == 0 {
                return config_err("DGP sample size must be positive");
            }
        }
        let r = &self.restriction;
        // Non-positive values are legal nulls; the test reports them as
        // infeasible rather than failing.
        if let Some(b) = r.beta0 {
            if !b.is_finite() {
                return config_err(format!("beta0 must be finite, got {b}"));
            }
        }
        if let Some(g) = &r.beta0_grid {
            if g.is_empty() {
                return config_err("beta0 grid is empty");
            }
            if let Some(b) = g.iter().find(|b| !b.is_finite()) {
                return config_err(format!("beta0 grid values must be finite, got {b}"));
            }
        }
        match (&r.pi_rows, &r.pi_values) {
            (None, None) => {}
            (Some(rows), Some(values)) => {
                let d = self.model.spec().d_pi;
                if rows.is_empty() {
                    return config_err("pi_rows is empty");
                }
                if rows.len() != values.len() {
                    return config_err(format!(
                        "{} pi_rows but {} pi_values",
                        rows.len(),
                        values.len()
                    ));
                }
                if let Some(row) = rows.iter().find(|row| row.len() != d) {
                    return config_err(format!("each pi row needs {d} entries, got {}", row.len()));
                }
            }
            _ => return config_err("pi_rows and pi_values must be given together"),
        }
        let t = &self.tuning;
        if t.pi_grid_size == 0 || t.beta_grid_points < 2 || t.beta_star_points == 0 {
            return config_err("grid sizes must be positive (beta_grid_points >= 2)");
        }
        if !(t.ci_step > 0.0) {
            return config_err("ci_step must be positive");
        }
        Ok(())
    }

    /// The data matrix, read from CSV or simulated.
    pub fn data(&self) -> CliResult<DMatrix<f64>> {
        match &self.input {
            Input::Csv { path, columns } => {
                read_csv(path, columns).map_err(|source| CliError::Data {
                    path: path.clone(),
                    source,
                })
            }
            Input::Dgp {
                structural,
                n,
                seed,
            } => Ok(simulate_dgp(&DgpSpec {
                structural: structural.clone(),
                n: *n,
                seed: *seed,
            })?),
        }
    }

    pub fn objective(&self) -> CliResult<Objective> {
        let data = self.data()?;
        let moments = compute_moments(self.model, &data).map_err(|source| match &self.input {
            Input::Csv { path, .. } => CliError::Data {
                path: path.clone(),
                source,
            },
            Input::Dgp { .. } => CliError::Core(source),
        })?;
        Ok(Objective::new(&moments)?)
    }

    /// The null with `beta = beta0` (when given) and the affine `pi` rows.
    pub fn restriction(&self, beta0: Option<f64>) -> Restriction {
        let pi_rows = self
            .restriction
            .pi_rows
            .as_ref()
            .zip(self.restriction.pi_values.as_ref())
            .map(|(rows, values)| {
                let d = self.model.spec().d_pi;
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                (
                    DMatrix::from_row_slice(rows.len(), d, &flat),
                    DVector::from_column_slice(values),
                )
            });
        Restriction { beta0, pi_rows }
    }

    /// The single hypothesis of `test` and `simulate-quantiles`.
    pub fn single_restriction(&self) -> CliResult<Restriction> {
        let r = self.restriction(self.restriction.beta0);
        if r.is_none() {
            return config_err("no null hypothesis: give --beta0 or `pi_rows`/`pi_values`");
        }
        Ok(r)
    }

    pub fn beta0_grid(&self) -> Option<Vec<f64>> {
        self.restriction.beta0_grid.clone()
    }

    pub fn options(&self, case: Case) -> CliResult<RqlrOptions> {
        let default = AlphaBudget::default_for(case, self.alpha)?;
        let budget = AlphaBudget::new(
            self.alpha,
            self.budget.alpha_c.unwrap_or(default.alpha_c),
            self.budget.alpha_psi.unwrap_or(default.alpha_psi),
        )?;
        budget.check_case(case)?;
        let mut opts = RqlrOptions::defaults(self.model, case, self.alpha, self.seed)?;
        opts.budget = budget;
        opts.draws = self.draws;
        opts.pi_grid_size = self.tuning.pi_grid_size;
        opts.beta_grid_points = self.tuning.beta_grid_points;
        opts.beta_star_points = self.tuning.beta_star_points;
        opts.refine = self.tuning.refine;
        opts.max_rule = self.max_rule;
        Ok(opts)
    }

    /// Replication count for the study, checked against [`MIN_REPS`].
    pub fn study_reps(&self) -> CliResult<usize> {
        match self.reps {
            Some(r) if r >= MIN_REPS => Ok(r),
            Some(r) => config_err(format!("reps must be at least {MIN_REPS}, got {r}")),
            None => config_err("the study needs --reps"),
        }
    }
}
