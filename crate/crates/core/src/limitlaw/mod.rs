//! Limit distributions of the QLR statistic and their simulated quantiles.
//!
//! Under strong identification the limit is a difference of two projections
//! of a Gaussian vector onto polyhedral cones (case `S`). Under weak
//! identification `beta` is concentrated out of a quadratic limit process
//! whose coefficients vary with `beta` (cases `W1` and `W2`). Draws share a
//! Gaussian vector `Y_b ~ N(0, V)` across drift candidates so that suprema
//! over candidates compare like with like.

mod polyhedron;
mod weak;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{checked_cholesky, spd_inverse};
use crate::model::{Model, ThetaPoint};
use crate::rng::substream;

pub use polyhedron::{qp_min, Polyhedron, QpMin};
pub use weak::concentrated_qw;

/// Grid size for the `beta` infimum.
pub const BETA_GRID_POINTS: usize = 200;
/// Tolerance on the value of each refined `beta` infimum.
pub const REFINE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    S,
    W1,
    W2,
}

/// A drift function `c(beta) = sqrt(n) (tau(pi*, beta) - tau(pi*, beta*))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCandidate {
    pub pi_star: DVector<f64>,
    pub beta_star: f64,
}

/// Everything the limit distribution depends on.
///
/// `pi_hat` and `beta_hat` locate the local expansion. `psi` and `psi_r` live
/// in `theta` coordinates; case `W1` uses the slice of `psi_r` with the `beta`
/// direction fixed at zero. `r1` holds the restriction rows on `pi` for case
/// `W2`. `beta_grid` discretizes the cross-section at `pi_hat`.
#[derive(Debug, Clone)]
pub struct LimitLawSpec {
    pub model: Model,
    pub n: usize,
    pub pi_hat: DVector<f64>,
    pub beta_hat: f64,
    pub h: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub psi: Polyhedron,
    pub psi_r: Polyhedron,
    pub r1: Option<DMatrix<f64>>,
    pub case: Case,
    pub beta_grid: Vec<f64>,
    /// `None` keeps the plain grid infimum.
    pub refine_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub quantile: f64,
    /// Half the distance between the order statistics one binomial standard
    /// deviation either side of the quantile's rank.
    pub mc_se: f64,
}

/// The `ceil(level * B)`-th order statistic of the draws.
pub fn quantile_from_draws(draws: &[f64], level: f64) -> QuantileEstimate {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    if b == 0 {
        return QuantileEstimate {
            quantile: f64::NAN,
            mc_se: f64::NAN,
        };
    }
    let bf = b as f64;
    let rank = |r: f64| (r.ceil() as usize).clamp(1, b) - 1;
    let spread = (bf * level * (1.0 - level)).sqrt();
    let lo = ((bf * level - spread).floor().max(1.0) as usize).min(b) - 1;
    let hi = rank(bf * level + spread);
    QuantileEstimate {
        quantile: sorted[rank(bf * level)],
        mc_se: 0.5 * (sorted[hi] - sorted[lo]),
    }
}

enum Engine {
    Strong {
        dt: DMatrix<f64>,
        jinv: DMatrix<f64>,
        restricted: QpMin,
        unrestricted: QpMin,
    },
    Weak(weak::WeakEngine),
}

/// Precomputed limit law for a fixed set of drift candidates.
pub struct Simulator {
    spec: LimitLawSpec,
    chol_v: DMatrix<f64>,
    engine: Engine,
    n_outputs: usize,
}

impl Simulator {
    /// Case `S` ignores the candidates and produces a single column of draws.
    pub fn new(spec: &LimitLawSpec, candidates: &[DriftCandidate]) -> Result<Self> {
        let model_spec = spec.model.spec();
        let (d_pi, d_delta) = (model_spec.d_pi, model_spec.d_delta);
        if spec.pi_hat.len() != d_pi {
            return Err(Error::DimensionMismatch {
                what: "pi_hat",
                expected: d_pi,
                got: spec.pi_hat.len(),
            });
        }
        if spec.h.shape() != (d_delta, d_delta) || spec.v.shape() != (d_delta, d_delta) {
            return Err(Error::DimensionMismatch {
                what: "H or V",
                expected: d_delta,
                got: spec.h.nrows(),
            });
        }
        let chol_v = crate::linalg::cholesky(&spec.v)?.l();
        let (engine, n_outputs) = match spec.case {
            Case::S => {
                let theta = ThetaPoint::new(spec.pi_hat.clone(), spec.beta_hat);
                let d = spec.model.link_jacobian(&theta)?;
                let j = crate::linalg::symmetrize(&(d.transpose() * &spec.h * &d));
                checked_cholesky(&j)?;
                let engine = Engine::Strong {
                    dt: d.transpose(),
                    jinv: spd_inverse(&j)?,
                    restricted: QpMin::new(&j, &spec.psi_r)?,
                    unrestricted: QpMin::new(&j, &spec.psi)?,
                };
                (engine, 1)
            }
            Case::W1 | Case::W2 => {
                if candidates.is_empty() {
                    return Err(Error::InvalidInput(
                        "weak-case limit law needs at least one drift candidate".into(),
                    ));
                }
                (
                    Engine::Weak(weak::WeakEngine::new(spec, candidates)?),
                    candidates.len(),
                )
            }
        };
        Ok(Self {
            spec: spec.clone(),
            chol_v,
            engine,
            n_outputs,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// `Y_b`, drawn from its own substream so draw `b` is schedule independent.
    pub fn y_draw(&self, seed: u64, b: u64) -> DVector<f64> {
        let mut rng = substream(seed, &[b]);
        let z = DVector::from_fn(self.chol_v.nrows(), |_, _| StandardNormal.sample(&mut rng));
        &self.chol_v * z
    }

    /// One draw of the limiting QLR per candidate, given `Y`.
    pub fn draw(&self, y: &DVector<f64>) -> Result<Vec<f64>> {
        match &self.engine {
            Engine::Strong {
                dt,
                jinv,
                restricted,
                unrestricted,
            } => {
                let z = -(jinv * (dt * y));
                Ok(vec![restricted.solve(&z)?.0 - unrestricted.solve(&z)?.0])
            }
            Engine::Weak(engine) => engine.draw(&self.spec, y),
        }
    }

    /// `B x n_outputs` draws, returned per output column.
    pub fn simulate(&self, draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if draws == 0 {
            return Err(Error::InvalidInput(
                "the number of draws must be positive".into(),
            ));
        }
        let rows: Vec<Vec<f64>> = (0..draws as u64)
            .into_par_iter()
            .map(|b| self.draw(&self.y_draw(seed, b)))
            .collect::<Result<_>>()?;
        Ok((0..self.n_outputs)
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect())
    }
}

/// One draw of the limiting QLR for a single drift candidate.
pub fn draw_qlr_limit(
    spec: &LimitLawSpec,
    candidate: &DriftCandidate,
    y: &DVector<f64>,
) -> Result<f64> {
    Ok(Simulator::new(spec, std::slice::from_ref(candidate))?.draw(y)?[0])
}

/// `(1 - alpha)` quantiles for every candidate from common draws.
pub fn simulate_quantiles(
    spec: &LimitLawSpec,
    candidates: &[DriftCandidate],
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<QuantileEstimate>> {
    let sim = Simulator::new(spec, candidates)?;
    Ok(sim
        .simulate(draws, seed)?
        .iter()
        .map(|d| quantile_from_draws(d, 1.0 - alpha))
        .collect())
}

pub fn simulate_quantile(
    spec: &LimitLawSpec,
    candidate: &DriftCandidate,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<QuantileEstimate> {
    Ok(simulate_quantiles(spec, std::slice::from_ref(candidate), alpha, draws, seed)?[0])
}
