//! Bounded minimum-distance estimation and the QLR statistic.
//!
//! `Q_n(theta) = (delta(theta) - m)' W (delta(theta) - m) / 2` is minimized
//! directly in `theta` coordinates. The bounds are handled by linearizing
//! them inside each Gauss-Newton step (see [`sqp`]), so the unrestricted,
//! null-restricted and bound-free fits share one engine.

mod sqp;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{linspace, min_norm_solution, null_space};
use crate::model::{Model, StructuralParams, ThetaPoint};
use crate::moments::SampleMoments;
use crate::rng::substream;

use sqp::{Fit, Problem};

/// A bound counts as active when `|l_j| < ACTIVE_TOL`.
pub const ACTIVE_TOL: f64 = 1e-6;
/// Number of starting points for each fit.
pub const N_STARTS: usize = 16;
const PROFILE_POINTS: usize = 200;
const START_SEED: u64 = 0x5eed_0f_57a7;

#[derive(Debug, Clone)]
pub struct Objective {
    pub model: Model,
    pub n: usize,
    pub m_hat: DVector<f64>,
    pub w: DMatrix<f64>,
}

impl Objective {
    /// Uses the inverse of the (regularized) moment variance as weight.
    pub fn new(moments: &SampleMoments) -> Result<Self> {
        let (w, _) = moments.weight_matrix()?;
        Self::with_weight(moments, w)
    }

    pub fn with_weight(moments: &SampleMoments, w: DMatrix<f64>) -> Result<Self> {
        let d = moments.model.spec().d_delta;
        if moments.m_hat.len() != d {
            return Err(Error::DimensionMismatch {
                what: "moment vector",
                expected: d,
                got: moments.m_hat.len(),
            });
        }
        if w.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                what: "weight matrix",
                expected: d,
                got: w.nrows(),
            });
        }
        Ok(Self {
            model: moments.model,
            n: moments.n,
            m_hat: moments.m_hat.clone(),
            w,
        })
    }

    pub fn q_value(&self, theta: &ThetaPoint) -> Result<f64> {
        let r = self.model.link_delta(theta)? - &self.m_hat;
        Ok(0.5 * r.dot(&(&self.w * &r)))
    }

    /// Gradient of `Q_n` with respect to `pi` at fixed `beta`.
    pub fn pi_gradient(&self, theta: &ThetaPoint) -> Result<DVector<f64>> {
        let d_pi = self.model.spec().d_pi;
        let r = self.model.link_delta(theta)? - &self.m_hat;
        let d = self.model.link_jacobian(theta)?;
        Ok(d.columns(0, d_pi).transpose() * (&self.w * r))
    }

    fn pi_seed(&self) -> DVector<f64> {
        self.m_hat.rows(0, self.model.spec().d_pi).into_owned()
    }
}

/// The null hypothesis `r(theta) = 0`: `beta = beta0`, an affine
/// restriction `R1 pi = r0`, or both.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Restriction {
    pub beta0: Option<f64>,
    pub pi_rows: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Restriction {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn beta(beta0: f64) -> Self {
        Self {
            beta0: Some(beta0),
            pi_rows: None,
        }
    }

    pub fn affine_pi(r1: DMatrix<f64>, r0: DVector<f64>) -> Self {
        Self {
            beta0: None,
            pi_rows: Some((r1, r0)),
        }
    }

    pub fn is_none(&self) -> bool {
        self.beta0.is_none() && self.pi_rows.is_none()
    }

    pub fn satisfied_by(&self, theta: &ThetaPoint, tol: f64) -> bool {
        let beta_ok = self.beta0.is_none_or(|b| (theta.beta - b).abs() <= tol);
        let pi_ok = self
            .pi_rows
            .as_ref()
            .is_none_or(|(r1, r0)| (r1 * &theta.pi - r0).amax() <= tol);
        beta_ok && pi_ok
    }

    /// Affine slice `theta = anchor + basis * y` carrying the restriction.
    fn slice(&self, model: Model) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d_pi = model.spec().d_pi;
        let d = d_pi + 1;
        if let Some(b) = self.beta0 {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::InfeasibleRestriction(format!(
                    "beta0 = {b} is not a positive variance"
                )));
            }
        }
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut values = Vec::new();
        if let Some((r1, r0)) = &self.pi_rows {
            if r1.ncols() != d_pi || r1.nrows() != r0.len() {
                return Err(Error::DimensionMismatch {
                    what: "restriction matrix",
                    expected: d_pi,
                    got: r1.ncols(),
                });
            }
            for i in 0..r1.nrows() {
                rows.push(DVector::from_fn(
                    d,
                    |k, _| if k < d_pi { r1[(i, k)] } else { 0.0 },
                ));
                values.push(r0[i]);
            }
        }
        if let Some(b) = self.beta0 {
            rows.push(DVector::from_fn(
                d,
                |k, _| if k == d_pi { 1.0 } else { 0.0 },
            ));
            values.push(b);
        }
        let a = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
        let anchor = min_norm_solution(&a, &DVector::from_vec(values))?;
        Ok((anchor, null_space(&a)?))
    }
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub theta_hat: ThetaPoint,
    /// `None` when the two-factor inverse fails at the estimate.
    pub structural_hat: Option<StructuralParams>,
    pub q_value: f64,
    pub active_bounds: Vec<usize>,
    pub converged: bool,
    /// Max minus min objective over converged starts.
    pub multistart_spread: f64,
    /// Point, objective value and active bounds reached from each converged start.
    pub start_optima: Vec<StartOptimum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartOptimum {
    pub theta: ThetaPoint,
    pub q_value: f64,
    pub active_bounds: Vec<usize>,
}

fn active_set(model: Model, theta: &ThetaPoint) -> Vec<usize> {
    match model.bounds(theta) {
        Ok(ell) => (0..ell.len())
            .filter(|&j| ell[j].abs() < ACTIVE_TOL)
            .collect(),
        Err(_) => Vec::new(),
    }
}

/// Candidate `beta` values spanning the cross-section implied by `m`, widened
/// by 10% on each side.
fn beta_seeds(obj: &Objective, count: usize) -> Vec<f64> {
    let pi = obj.pi_seed();
    let (lo, hi) = match obj.model.cross_section(&pi) {
        Ok((lo, hi)) if hi.is_finite() => (lo, hi),
        // Outside the projected parameter space: span the bound roots instead.
        _ => {
            let at0 = obj
                .model
                .bounds(&ThetaPoint::new(pi.clone(), 0.0))
                .expect("dimensions checked");
            let at1 = obj
                .model
                .bounds(&ThetaPoint::new(pi.clone(), 1.0))
                .expect("dimensions checked");
            let roots: Vec<f64> = at0
                .iter()
                .zip(at1.iter())
                .filter(|(a, b)| (*b - *a).abs() > 1e-12)
                .map(|(a, b)| -a / (b - a))
                .filter(|r| *r > 0.0 && r.is_finite())
                .collect();
            if roots.is_empty() {
                (0.1, 10.0)
            } else {
                (
                    roots.iter().cloned().fold(f64::INFINITY, f64::min),
                    roots.iter().cloned().fold(0.0, f64::max),
                )
            }
        }
    };
    let pad = 0.1 * (hi - lo).max(1e-3 * hi.max(1e-3));
    let lo = (lo - pad).max(0.05 * lo.max(1e-3));
    linspace(lo, hi + pad, count)
}

fn perturbed_pi(obj: &Objective, count: usize, scale: f64) -> Vec<DVector<f64>> {
    let seed = obj.pi_seed();
    let mut rng = substream(START_SEED, &[]);
    let mut out = vec![seed.clone()];
    while out.len() < count {
        out.push(seed.map(|v| v + scale * (1.0 + v.abs()) * rng.sample::<f64, _>(StandardNormal)));
    }
    out
}

/// The moment seed with one loading covariance negated at a time; `tau` is
/// multilinear in them.
fn sign_flips(obj: &Objective) -> Vec<DVector<f64>> {
    let seed = obj.pi_seed();
    let n_cov = match obj.model {
        Model::OneFactor => 2,
        Model::TwoFactor => 6,
    };
    (0..n_cov)
        .map(|k| {
            let mut flipped = seed.clone();
            flipped[k] = -flipped[k];
            flipped
        })
        .collect()
}

fn starts(obj: &Objective, restriction: &Restriction, extra: &[ThetaPoint]) -> Vec<ThetaPoint> {
    let mut out: Vec<ThetaPoint> = match restriction.beta0 {
        Some(b) => perturbed_pi(obj, N_STARTS, 0.1)
            .into_iter()
            .map(|pi| ThetaPoint::new(pi, b))
            .collect(),
        None => {
            let pi = obj.pi_seed();
            let mut out: Vec<ThetaPoint> = beta_seeds(obj, N_STARTS)
                .into_iter()
                .map(|b| ThetaPoint::new(pi.clone(), b))
                .collect();
            // Fitting tau may need a covariance to change sign, which a
            // free-beta path can avoid by running to the far end of the interval.
            let half = beta_seeds(obj, N_STARTS / 2);
            for flipped in sign_flips(obj) {
                out.extend(half.iter().map(|&b| ThetaPoint::new(flipped.clone(), b)));
            }
            out
        }
    };
    out.extend(extra.iter().cloned());
    out
}

fn best_of(fits: &[Fit]) -> Option<(&Fit, f64)> {
    let ok: Vec<&Fit> = fits.iter().filter(|f| f.converged).collect();
    let best = ok.iter().copied().min_by(|a, b| a.q.total_cmp(&b.q))?;
    let worst = ok.iter().map(|f| f.q).fold(f64::NEG_INFINITY, f64::max);
    Some((best, worst - best.q))
}

fn run(problem: &Problem, starts: &[ThetaPoint]) -> Vec<Fit> {
    starts
        .par_iter()
        .filter_map(|s| problem.minimize(s))
        .collect()
}

/// Profiles `beta` over a grid with inner bounded fits, then polishes the
/// best grid point with a full fit.
fn profile(obj: &Objective, restriction: &Restriction, problem: &Problem) -> Option<Fit> {
    let mut best: Option<Fit> = None;
    let mut pi = obj.pi_seed();
    for b in beta_seeds(obj, PROFILE_POINTS) {
        let inner_restriction = Restriction {
            beta0: Some(b),
            pi_rows: restriction.pi_rows.clone(),
        };
        let Ok((anchor, basis)) = inner_restriction.slice(obj.model) else {
            continue;
        };
        let inner = Problem {
            obj,
            anchor,
            basis,
            bounded: true,
        };
        if let Some(fit) = inner.minimize(&ThetaPoint::new(pi.clone(), b)) {
            if fit.violation <= sqp::FEAS_TOL {
                pi = fit.theta.pi.clone();
                if best.as_ref().is_none_or(|f| fit.q < f.q) {
                    best = Some(fit);
                }
            }
        }
    }
    let polished = problem.minimize(&best?.theta)?;
    polished.converged.then_some(polished)
}

fn finish(obj: &Objective, fit: &Fit, spread: f64, fits: &[Fit]) -> Result<EstimateResult> {
    Ok(EstimateResult {
        structural_hat: obj.model.from_theta(&fit.theta).ok(),
        theta_hat: fit.theta.clone(),
        q_value: fit.q,
        active_bounds: active_set(obj.model, &fit.theta),
        converged: fit.converged,
        multistart_spread: spread,
        start_optima: fits
            .iter()
            .filter(|f| f.converged)
            .map(|f| StartOptimum {
                theta: f.theta.clone(),
                q_value: f.q,
                active_bounds: active_set(obj.model, &f.theta),
            })
            .collect(),
    })
}

fn estimate_bounded(
    obj: &Objective,
    restriction: &Restriction,
    extra: &[ThetaPoint],
) -> Result<EstimateResult> {
    let (anchor, basis) = restriction.slice(obj.model)?;
    let problem = Problem {
        obj,
        anchor,
        basis,
        bounded: true,
    };
    let fits = run(&problem, &starts(obj, restriction, extra));
    if let Some((best, spread)) = best_of(&fits) {
        return finish(obj, best, spread, &fits);
    }
    if let Some(fit) = profile(obj, restriction, &problem) {
        return finish(obj, &fit, 0.0, std::slice::from_ref(&fit));
    }
    if fits.iter().all(|f| f.violation > sqp::FEAS_TOL) && !restriction.is_none() {
        return Err(Error::InfeasibleRestriction(
            "no start reached the restricted parameter space".into(),
        ));
    }
    Err(Error::NoConvergence(format!(
        "none of {} starts converged",
        fits.len()
    )))
}

/// Minimizes `Q_n` over the parameter space `{l(theta) <= 0}`.
pub fn estimate_unrestricted(obj: &Objective) -> Result<EstimateResult> {
    estimate_bounded(obj, &Restriction::none(), &[])
}

/// Minimizes `Q_n` over the restricted parameter space `{l(theta) <= 0, r(theta) = 0}`.
pub fn estimate_restricted(obj: &Objective, restriction: &Restriction) -> Result<EstimateResult> {
    estimate_bounded(obj, restriction, &[])
}

/// Minimizes `Q_n` over `pi` with `beta = beta0`, ignoring the bounds.
pub fn estimate_breve(obj: &Objective, beta0: f64) -> Result<ThetaPoint> {
    estimate_breve_restricted(obj, &Restriction::beta(beta0))
}

/// Bound-free fit on a restriction that pins `beta` (and possibly also
/// imposes `R1 pi = r0`).
pub fn estimate_breve_restricted(obj: &Objective, restriction: &Restriction) -> Result<ThetaPoint> {
    let beta0 = restriction
        .beta0
        .ok_or_else(|| Error::InvalidInput("the bound-free fit needs beta fixed".into()))?;
    let (anchor, basis) = restriction.slice(obj.model)?;
    let problem = Problem {
        obj,
        anchor,
        basis,
        bounded: false,
    };
    let mut pis = perturbed_pi(obj, N_STARTS / 2, 0.1);
    pis.extend(sign_flips(obj));
    let starts: Vec<ThetaPoint> = pis
        .into_iter()
        .map(|pi| ThetaPoint::new(pi, beta0))
        .collect();
    let fits = run(&problem, &starts);
    best_of(&fits).map(|(f, _)| f.theta.clone()).ok_or_else(|| {
        Error::NoConvergence("bound-free fit did not converge from any start".into())
    })
}

#[derive(Debug, Clone)]
pub struct QlrFit {
    pub qlr: f64,
    pub unrestricted: EstimateResult,
    pub restricted: EstimateResult,
}

/// `QLR_n = 2 n (inf_{restricted} Q_n - inf Q_n)`, clamped at zero.
pub fn qlr_fit(obj: &Objective, restriction: &Restriction) -> Result<QlrFit> {
    let restricted = estimate_restricted(obj, restriction)?;
    // Seeding with the restricted optimum keeps the unrestricted value below it.
    let unrestricted =
        estimate_bounded(obj, &Restriction::none(), &[restricted.theta_hat.clone()])?;
    Ok(QlrFit {
        qlr: qlr_from_values(obj.n, restricted.q_value, unrestricted.q_value),
        unrestricted,
        restricted,
    })
}

pub fn qlr_statistic(obj: &Objective, restriction: &Restriction) -> Result<f64> {
    Ok(qlr_fit(obj, restriction)?.qlr)
}

pub(crate) fn qlr_from_values(n: usize, q_restricted: f64, q_unrestricted: f64) -> f64 {
    (2.0 * n as f64 * (q_restricted - q_unrestricted)).max(0.0)
}
