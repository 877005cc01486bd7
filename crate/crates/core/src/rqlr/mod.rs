//! The robust QLR test: nuisance and boundary sets, the identification
//! category selector, the robust critical value and test inversion.
//!
//! Everything local is built around `theta_breve`, the fit that imposes the
//! null but ignores the bounds, with `H = V = W` the optimal weight.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{estimate_breve_restricted, qlr_fit, Objective, QlrFit, Restriction};
use crate::limitlaw::{
    quantile_from_draws, Case, DriftCandidate, LimitLawSpec, Polyhedron, QuantileEstimate,
    Simulator, BETA_GRID_POINTS, REFINE_TOL,
};
use crate::linalg::{checked_cholesky, linspace, null_space, spd_inverse};
use crate::model::{Model, ThetaPoint};
use crate::rng::derive_seed;

/// Default number of simulated draws per quantile.
pub const DEFAULT_DRAWS: usize = 10_000;
pub const DEFAULT_CI_STEP: f64 = 0.02;

/// Standard normal quantile.
pub fn z_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Level split between the nuisance set (`alpha_c`), the boundary sets
/// (`alpha_psi`) and the quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBudget {
    pub alpha: f64,
    pub alpha_c: f64,
    pub alpha_psi: f64,
}

impl AlphaBudget {
    pub fn new(alpha: f64, alpha_c: f64, alpha_psi: f64) -> Result<Self> {
        let budget = Self {
            alpha,
            alpha_c,
            alpha_psi,
        };
        let ok = alpha > 0.0
            && alpha < 1.0
            && alpha_c >= 0.0
            && alpha_psi >= 0.0
            && budget.alpha_w1() > 0.0
            && budget.alpha_s() > 0.0;
        if !ok {
            return Err(Error::InvalidInput(format!(
                "inconsistent level budget alpha={alpha}, alpha_c={alpha_c}, alpha_psi={alpha_psi}"
            )));
        }
        Ok(budget)
    }

    /// `alpha_c = alpha_psi = alpha / 10` for `W1`; `alpha_c = 2 alpha_psi = alpha / 5` for `W2`.
    pub fn default_for(case: Case, alpha: f64) -> Result<Self> {
        let budget = match case {
            Case::W2 => Self::new(alpha, alpha / 5.0, alpha / 10.0)?,
            _ => Self::new(alpha, alpha / 10.0, alpha / 10.0)?,
        };
        budget.check_case(case)?;
        Ok(budget)
    }

    /// The weak-case level may not exceed the strong one.
    pub fn check_case(&self, case: Case) -> Result<()> {
        if self.alpha_weak(case) > self.alpha_s() + 1e-15 {
            return Err(Error::InvalidInput(format!(
                "alpha_{case:?} = {} exceeds alpha_S = {}",
                self.alpha_weak(case),
                self.alpha_s()
            )));
        }
        Ok(())
    }

    pub fn alpha_w1(&self) -> f64 {
        self.alpha - self.alpha_c - self.alpha_psi
    }

    pub fn alpha_w2(&self) -> f64 {
        self.alpha - self.alpha_c
    }

    pub fn alpha_s(&self) -> f64 {
        self.alpha - 2.0 * self.alpha_psi
    }

    pub fn alpha_weak(&self, case: Case) -> f64 {
        match case {
            Case::W2 => self.alpha_w2(),
            _ => self.alpha_w1(),
        }
    }
}

/// A restriction pinning `beta` is case `W1`; one on `pi` alone is `W2`.
pub fn classify(restriction: &Restriction) -> Result<Case> {
    match (restriction.beta0, &restriction.pi_rows) {
        (Some(_), _) => Ok(Case::W1),
        (None, Some(_)) => Ok(Case::W2),
        (None, None) => Err(Error::InvalidInput(
            "the null hypothesis imposes no restriction".into(),
        )),
    }
}

/// `J_11 = D_1' W D_1` at `theta`, with `D_1 = d delta / d pi`.
pub fn breve_information(obj: &Objective, theta: &ThetaPoint) -> Result<DMatrix<f64>> {
    let d_pi = obj.model.spec().d_pi;
    let d = obj.model.link_jacobian(theta)?;
    let d1 = d.columns(0, d_pi);
    Ok(crate::linalg::symmetrize(&(d1.transpose() * &obj.w * d1)))
}

fn breve_inverse(obj: &Objective, theta: &ThetaPoint) -> Result<DMatrix<f64>> {
    let j = breve_information(obj, theta)?;
    checked_cholesky(&j)?;
    spd_inverse(&j)
}

/// `(s(pi_breve), V_s)` with `V_s` the diagonal of `S J_11^-1 S'`.
fn strength_and_variance(
    obj: &Objective,
    theta: &ThetaPoint,
    j_inv: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (s, jac) = obj.model.id_strength(&theta.pi)?;
    let v = DVector::from_fn(s.len(), |i, _| {
        let row = jac.row(i);
        (row * j_inv * row.transpose())[(0, 0)]
    });
    Ok((s, v))
}

/// Endpoints `center +- z_{1 - alpha_c / 2} sqrt(v / n)` of the `rho_2` interval.
pub fn pi_interval(center: f64, v: f64, n: usize, alpha_c: f64) -> (f64, f64) {
    let half = z_quantile(1.0 - alpha_c / 2.0) * (v / n as f64).sqrt();
    (center - half, center + half)
}

/// Symmetric grid of `count` points on `[center - half, center + half]`,
/// always containing the center.
fn centered_grid(center: f64, half: f64, count: usize) -> Vec<f64> {
    let count = count.max(1) | 1;
    if count == 1 || !(half > 0.0) {
        return vec![center];
    }
    let mut grid = linspace(center - half, center + half, count);
    grid[count / 2] = center;
    grid
}

/// The nuisance set as a deterministic grid of `pi*` values around `theta_breve`.
///
/// One factor: `rho_2` on its `1 - alpha_c` interval. Two factors: a
/// `grid_size x grid_size` grid of `(s_1, s_2)` offsets inside the two
/// `z_{1 - alpha_c / 4}` bands, mapped back to `(rho_31, rho_32)` with the
/// other loadings fixed.
pub fn build_pi_hat(
    obj: &Objective,
    theta_breve: &ThetaPoint,
    alpha_c: f64,
    grid_size: usize,
) -> Result<Vec<DVector<f64>>> {
    let j_inv = breve_inverse(obj, theta_breve)?;
    let (s, v) = strength_and_variance(obj, theta_breve, &j_inv)?;
    let sqrt_n = (obj.n as f64).sqrt();
    let pi = &theta_breve.pi;
    match obj.model {
        Model::OneFactor => {
            let (lo, hi) = pi_interval(s[0], v[0], obj.n, alpha_c);
            Ok(centered_grid(s[0], 0.5 * (hi - lo), grid_size)
                .into_iter()
                .map(|rho2| {
                    let mut p = pi.clone();
                    p[1] = rho2;
                    p
                })
                .collect())
        }
        Model::TwoFactor => {
            // s = M (rho_31, rho_32) with the other loadings at their breve values.
            let (r11, r12, r21, r22) = (pi[0], pi[1], pi[2], pi[3]);
            let m = DMatrix::from_row_slice(2, 2, &[-r22, r21, -r12, r11]);
            let m_inv = m.try_inverse().ok_or_else(|| {
                Error::NotInvertible("loadings of the first two indicators are collinear".into())
            })?;
            let z = z_quantile(1.0 - alpha_c / 4.0);
            let g1 = centered_grid(0.0, z * v[0].sqrt() / sqrt_n, grid_size);
            let g2 = centered_grid(0.0, z * v[1].sqrt() / sqrt_n, grid_size);
            let mut out = Vec::with_capacity(g1.len() * g2.len());
            for &d1 in &g1 {
                for &d2 in &g2 {
                    if d1 == 0.0 && d2 == 0.0 {
                        out.push(pi.clone());
                        continue;
                    }
                    let r3 = &m_inv * DVector::from_vec(vec![s[0] + d1, s[1] + d2]);
                    let mut p = pi.clone();
                    p[4] = r3[0];
                    p[5] = r3[1];
                    out.push(p);
                }
            }
            Ok(out)
        }
    }
}

/// `(l_bar+, l_bar-) = sqrt(n) l +- z se`, elementwise.
pub fn lbar_pm(
    sqrt_n_ell: &DVector<f64>,
    se: &DVector<f64>,
    z: f64,
) -> (DVector<f64>, DVector<f64>) {
    (sqrt_n_ell + se * z, sqrt_n_ell - se * z)
}

/// Estimated local parameter spaces `(Psi, Psi^r)` in `theta` coordinates.
///
/// `Psi = {psi : min(l_bar-, 0) + dl/dtheta psi <= 0}`. For `W1`
/// `Psi^r = {(psi_1, 0) : min(l_bar+, 0) + dl/dpi psi_1 <= 0}`; for `W2` the
/// `beta` direction stays free and `R_1 psi_1 = 0` is imposed instead.
pub fn build_boundary_sets(
    obj: &Objective,
    theta_breve: &ThetaPoint,
    alpha_psi: f64,
    restriction: &Restriction,
) -> Result<(Polyhedron, Polyhedron)> {
    let model = obj.model;
    let d_pi = model.spec().d_pi;
    let j_inv = breve_inverse(obj, theta_breve)?;
    let ell = model.bounds(theta_breve)?;
    let grad = model.bounds_jacobian(theta_breve)?;
    let se = DVector::from_fn(ell.len(), |j, _| {
        let g = grad.row(j).columns(0, d_pi).into_owned();
        (&g * &j_inv * g.transpose())[(0, 0)].max(0.0).sqrt()
    });
    // At most as many bounds as factors bind together.
    let z = z_quantile(1.0 - alpha_psi / model.n_factors() as f64);
    let (plus, minus) = lbar_pm(&(ell * (obj.n as f64).sqrt()), &se, z);
    let psi = Polyhedron::new(grad.clone(), minus.map(|v| v.min(0.0)));
    let basis = match classify(restriction)? {
        Case::W2 => {
            let (r1, _) = restriction.pi_rows.as_ref().expect("W2 has pi rows");
            let mut rows = DMatrix::zeros(r1.nrows(), d_pi + 1);
            rows.view_mut((0, 0), (r1.nrows(), d_pi)).copy_from(r1);
            null_space(&rows)?
        }
        _ => {
            let mut basis = DMatrix::zeros(d_pi + 1, d_pi);
            basis.view_mut((0, 0), (d_pi, d_pi)).fill_with_identity();
            basis
        }
    };
    let psi_r = Polyhedron::new(grad, plus.map(|v| v.min(0.0))).with_basis(basis);
    Ok((psi, psi_r))
}

/// Identification category selector: `true` flags weak identification.
pub fn ics_statistic(model: Model, s: &DVector<f64>, v: &DVector<f64>, n: usize) -> bool {
    let nf = n as f64;
    match model {
        Model::OneFactor => nf.sqrt() * s[0].abs() <= nf.ln() * v[0].sqrt(),
        Model::TwoFactor => nf * s[0] * s[0] / v[0] + nf * s[1] * s[1] / v[1] <= 2.0 * nf.ln(),
    }
}

pub fn ics_kappa(obj: &Objective, theta_breve: &ThetaPoint) -> Result<bool> {
    let j_inv = breve_inverse(obj, theta_breve)?;
    let (s, v) = strength_and_variance(obj, theta_breve, &j_inv)?;
    Ok(ics_statistic(obj.model, &s, &v, obj.n))
}

/// Tuning of the robust critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RqlrOptions {
    pub budget: AlphaBudget,
    pub draws: usize,
    pub seed: u64,
    /// Points per nuisance dimension: 21 for one factor, 9 for two.
    pub pi_grid_size: usize,
    /// `beta*` points on the restricted identified set in case `W2`.
    pub beta_star_points: usize,
    pub beta_grid_points: usize,
    pub refine: bool,
    /// `cv = max(q_S, sup q_L)`, dropping the selector.
    pub max_rule: bool,
    /// Overrides the selector.
    pub force_kappa: Option<bool>,
}

impl RqlrOptions {
    pub fn defaults(model: Model, case: Case, alpha: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            budget: AlphaBudget::default_for(case, alpha)?,
            draws: DEFAULT_DRAWS,
            seed,
            pi_grid_size: match model {
                Model::OneFactor => 21,
                Model::TwoFactor => 9,
            },
            beta_star_points: 11,
            beta_grid_points: BETA_GRID_POINTS,
            refine: true,
            max_rule: false,
            force_kappa: None,
        })
    }
}

/// The drift candidate attaining the supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupCandidate {
    pub pi_star: Vec<f64>,
    pub beta_star: f64,
    pub quantile: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub cv: f64,
    pub kappa: bool,
    pub case: Case,
    /// `sup q_L` over the candidates, when computed.
    pub q_weak: Option<f64>,
    /// `q_S`, when computed.
    pub q_strong: Option<f64>,
    /// Monte Carlo error of the quantile that determines `cv`.
    pub mc_se: f64,
    pub pi_grid_size: usize,
    pub n_candidates: usize,
    pub sup_candidate: Option<SupCandidate>,
    /// Set when the identified set at `pi_breve` is empty and the one at the
    /// unrestricted estimate is used instead.
    pub cross_section_fallback: bool,
    /// Set when `q_S` was requested but `J` at `theta_breve` is singular.
    pub strong_unavailable: bool,
    /// Smallest simulated limit draw, over every candidate.
    pub min_draw: Option<f64>,
}

/// Inputs from the estimation step that the critical value needs.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub theta_breve: ThetaPoint,
    /// `beta_hat`: `beta0` in case `W1`, the restricted estimate in `W2`.
    pub beta_hat: f64,
    /// `pi` of the unrestricted fit, used when `B(pi_breve)` is empty.
    pub pi_unrestricted: DVector<f64>,
}

/// `cv = kappa sup q_L(1 - alpha_L) + (1 - kappa) q_S(1 - alpha_S)`.
pub fn robust_critical_value(
    obj: &Objective,
    restriction: &Restriction,
    fit: &LocalFit,
    opts: &RqlrOptions,
) -> Result<CriticalValue> {
    let case = classify(restriction)?;
    let budget = opts.budget;
    budget.check_case(case)?;
    let kappa = match opts.force_kappa {
        Some(k) => k,
        None => ics_kappa(obj, &fit.theta_breve)?,
    };
    let base = base_spec(obj, restriction, fit, opts, case)?;

    let mut out = CriticalValue {
        cv: 0.0,
        kappa,
        case,
        q_weak: None,
        q_strong: None,
        mc_se: 0.0,
        pi_grid_size: 0,
        n_candidates: 0,
        sup_candidate: None,
        cross_section_fallback: false,
        strong_unavailable: false,
        min_draw: None,
    };
    let mut min_draw = f64::INFINITY;

    let mut weak: Option<QuantileEstimate> = None;
    if kappa || opts.max_rule {
        let part = weak_part(obj, fit, opts, &base)?;
        out.cross_section_fallback = part.fallback;
        out.pi_grid_size = part.pi_grid_size;
        out.n_candidates = part.candidates.len();
        min_draw = min_draw.min(part.min_draw());
        let level = 1.0 - budget.alpha_weak(case);
        let (best, q) = part
            .draws
            .iter()
            .map(|d| quantile_from_draws(d, level))
            .enumerate()
            .fold(
                (
                    0,
                    QuantileEstimate {
                        quantile: f64::NEG_INFINITY,
                        mc_se: 0.0,
                    },
                ),
                |acc, (i, q)| {
                    if q.quantile > acc.1.quantile {
                        (i, q)
                    } else {
                        acc
                    }
                },
            );
        out.q_weak = Some(q.quantile);
        out.sup_candidate = Some(SupCandidate {
            pi_star: part.candidates[best].pi_star.iter().copied().collect(),
            beta_star: part.candidates[best].beta_star,
            quantile: q.quantile,
            mc_se: q.mc_se,
        });
        weak = Some(q);
    }

    let mut strong: Option<QuantileEstimate> = None;
    if !kappa || opts.max_rule {
        match strong_draws(&base, opts) {
            Ok(draws) => {
                min_draw = min_draw.min(draws.iter().copied().fold(f64::INFINITY, f64::min));
                let q = quantile_from_draws(&draws, 1.0 - budget.alpha_s());
                out.q_strong = Some(q.quantile);
                strong = Some(q);
            }
            Err(Error::SingularJ11 { .. }) if kappa => out.strong_unavailable = true,
            Err(e) => return Err(e),
        }
    }
    out.min_draw = min_draw.is_finite().then_some(min_draw);

    let chosen = match (opts.max_rule, kappa, weak, strong) {
        (true, _, Some(w), Some(s)) => {
            if w.quantile >= s.quantile {
                w
            } else {
                s
            }
        }
        (_, true, Some(w), _) => w,
        (_, false, _, Some(s)) => s,
        (_, _, Some(w), None) => w,
        _ => {
            return Err(Error::InvalidInput(
                "no critical value could be computed".into(),
            ))
        }
    };
    out.cv = chosen.quantile.max(0.0);
    out.mc_se = chosen.mc_se;
    Ok(out)
}

/// Limit-law inputs shared by the weak and strong simulations; the `beta`
/// grid is filled in by [`weak_part`].
fn base_spec(
    obj: &Objective,
    restriction: &Restriction,
    fit: &LocalFit,
    opts: &RqlrOptions,
    case: Case,
) -> Result<LimitLawSpec> {
    let theta_breve = &fit.theta_breve;
    let (psi, psi_r) = build_boundary_sets(obj, theta_breve, opts.budget.alpha_psi, restriction)?;
    let r1 = restriction
        .pi_rows
        .as_ref()
        .filter(|_| case == Case::W2)
        .map(|(r1, _)| r1.clone());
    Ok(LimitLawSpec {
        model: obj.model,
        n: obj.n,
        pi_hat: theta_breve.pi.clone(),
        beta_hat: fit.beta_hat,
        h: obj.w.clone(),
        v: obj.w.clone(),
        psi,
        psi_r,
        r1,
        case,
        beta_grid: Vec::new(),
        refine_tol: opts.refine.then_some(REFINE_TOL),
    })
}

struct WeakPart {
    candidates: Vec<DriftCandidate>,
    /// One column of draws per candidate.
    draws: Vec<Vec<f64>>,
    fallback: bool,
    pi_grid_size: usize,
}

impl WeakPart {
    fn min_draw(&self) -> f64 {
        self.draws
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn weak_part(
    obj: &Objective,
    fit: &LocalFit,
    opts: &RqlrOptions,
    base: &LimitLawSpec,
) -> Result<WeakPart> {
    let model = obj.model;
    let theta_breve = &fit.theta_breve;
    let (interval, fallback) = match model.cross_section(&theta_breve.pi) {
        Ok(iv) => (iv, false),
        Err(Error::EmptyCrossSection { .. }) => (model.cross_section(&fit.pi_unrestricted)?, true),
        Err(e) => return Err(e),
    };
    let beta_grid = linspace(interval.0, interval.1, opts.beta_grid_points);
    let beta_stars = match base.case {
        Case::W2 => linspace(interval.0, interval.1, opts.beta_star_points.max(1)),
        _ => vec![fit.beta_hat],
    };
    let pis = build_pi_hat(obj, theta_breve, opts.budget.alpha_c, opts.pi_grid_size)?;
    let candidates: Vec<DriftCandidate> = pis
        .iter()
        .flat_map(|p| {
            beta_stars.iter().map(|&b| DriftCandidate {
                pi_star: p.clone(),
                beta_star: b,
            })
        })
        .filter(|c| model.tau(&c.pi_star, c.beta_star).is_ok())
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "no drift candidate has a finite tau".into(),
        ));
    }
    let spec = LimitLawSpec {
        beta_grid,
        ..base.clone()
    };
    let sim = Simulator::new(&spec, &candidates)?;
    let draws = sim.simulate(opts.draws, derive_seed(opts.seed, &[0]))?;
    Ok(WeakPart {
        candidates,
        draws,
        fallback,
        pi_grid_size: pis.len(),
    })
}

fn strong_draws(base: &LimitLawSpec, opts: &RqlrOptions) -> Result<Vec<f64>> {
    let spec = LimitLawSpec {
        case: Case::S,
        ..base.clone()
    };
    let sim = Simulator::new(&spec, &[])?;
    Ok(sim
        .simulate(opts.draws, derive_seed(opts.seed, &[1]))?
        .swap_remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub model: Model,
    pub n: usize,
    pub beta0: Option<f64>,
    /// Infinite when the restricted fit is infeasible.
    pub qlr: f64,
    pub cv: f64,
    pub reject: bool,
    /// The restriction cannot be met inside the parameter space.
    pub infeasible: bool,
    pub critical_value: Option<CriticalValue>,
    pub theta_breve: Option<Vec<f64>>,
    pub theta_hat: Option<Vec<f64>>,
    pub theta_hat_restricted: Option<Vec<f64>>,
    pub active_bounds: Vec<usize>,
    pub active_bounds_restricted: Vec<usize>,
    pub converged: bool,
    pub options: RqlrOptions,
}

/// Fits under the null and without it, then the bound-free local fit.
/// `None` when the restriction is infeasible.
fn fit_null(obj: &Objective, restriction: &Restriction) -> Result<Option<(QlrFit, LocalFit)>> {
    let case = classify(restriction)?;
    let fit = match qlr_fit(obj, restriction) {
        Ok(f) => f,
        Err(Error::InfeasibleRestriction(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let beta_hat = match case {
        Case::W2 => fit.restricted.theta_hat.beta,
        _ => restriction.beta0.expect("W1 pins beta"),
    };
    let breve_restriction = Restriction {
        beta0: Some(beta_hat),
        pi_rows: restriction.pi_rows.clone(),
    };
    let theta_breve = estimate_breve_restricted(obj, &breve_restriction)?;
    let local = LocalFit {
        theta_breve,
        beta_hat,
        pi_unrestricted: fit.unrestricted.theta_hat.pi.clone(),
    };
    Ok(Some((fit, local)))
}

fn to_vec(theta: &ThetaPoint) -> Vec<f64> {
    theta.to_vector().iter().copied().collect()
}

/// QLR statistic, robust critical value and decision for one null hypothesis.
pub fn rqlr_test(
    obj: &Objective,
    restriction: &Restriction,
    opts: &RqlrOptions,
) -> Result<TestReport> {
    let Some((fit, local)) = fit_null(obj, restriction)? else {
        return Ok(TestReport {
            model: obj.model,
            n: obj.n,
            beta0: restriction.beta0,
            qlr: f64::INFINITY,
            cv: 0.0,
            reject: true,
            infeasible: true,
            critical_value: None,
            theta_breve: None,
            theta_hat: None,
            theta_hat_restricted: None,
            active_bounds: Vec::new(),
            active_bounds_restricted: Vec::new(),
            converged: false,
            options: *opts,
        });
    };
    let cv = robust_critical_value(obj, restriction, &local, opts)?;
    Ok(TestReport {
        model: obj.model,
        n: obj.n,
        beta0: restriction.beta0,
        qlr: fit.qlr,
        cv: cv.cv,
        reject: fit.qlr > cv.cv,
        infeasible: false,
        theta_breve: Some(to_vec(&local.theta_breve)),
        theta_hat: Some(to_vec(&fit.unrestricted.theta_hat)),
        theta_hat_restricted: Some(to_vec(&fit.restricted.theta_hat)),
        active_bounds: fit.unrestricted.active_bounds.clone(),
        active_bounds_restricted: fit.restricted.active_bounds.clone(),
        converged: fit.unrestricted.converged && fit.restricted.converged,
        critical_value: Some(cv),
        options: *opts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateQuantile {
    pub pi_star: Vec<f64>,
    pub beta_star: f64,
    pub quantile: f64,
    pub mc_se: f64,
    pub min_draw: f64,
}

/// Every limit quantile behind a critical value, before the supremum and the
/// selector are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub case: Case,
    pub kappa: bool,
    pub qlr: f64,
    pub theta_breve: Vec<f64>,
    pub beta_hat: f64,
    pub alpha_weak: f64,
    pub alpha_strong: f64,
    pub cross_section_fallback: bool,
    pub candidates: Vec<CandidateQuantile>,
    /// `None` when `J` at `theta_breve` is singular.
    pub strong: Option<CandidateQuantile>,
}

/// Per-candidate weak quantiles and the strong quantile under `restriction`.
pub fn limit_quantiles(
    obj: &Objective,
    restriction: &Restriction,
    opts: &RqlrOptions,
) -> Result<QuantileTable> {
    let case = classify(restriction)?;
    opts.budget.check_case(case)?;
    let (fit, local) = fit_null(obj, restriction)?.ok_or_else(|| {
        Error::InfeasibleRestriction("no parameter value satisfies the null".into())
    })?;
    let kappa = ics_kappa(obj, &local.theta_breve)?;
    let base = base_spec(obj, restriction, &local, opts, case)?;
    let alpha_weak = opts.budget.alpha_weak(case);
    let alpha_strong = opts.budget.alpha_s();
    let part = weak_part(obj, &local, opts, &base)?;
    let min = |d: &[f64]| d.iter().copied().fold(f64::INFINITY, f64::min);
    let candidates = part
        .candidates
        .iter()
        .zip(&part.draws)
        .map(|(c, d)| {
            let q = quantile_from_draws(d, 1.0 - alpha_weak);
            CandidateQuantile {
                pi_star: c.pi_star.iter().copied().collect(),
                beta_star: c.beta_star,
                quantile: q.quantile,
                mc_se: q.mc_se,
                min_draw: min(d),
            }
        })
        .collect();
    let strong = match strong_draws(&base, opts) {
        Ok(d) => {
            let q = quantile_from_draws(&d, 1.0 - alpha_strong);
            Some(CandidateQuantile {
                pi_star: local.theta_breve.pi.iter().copied().collect(),
                beta_star: local.beta_hat,
                quantile: q.quantile,
                mc_se: q.mc_se,
                min_draw: min(&d),
            })
        }
        Err(Error::SingularJ11 { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(QuantileTable {
        case,
        kappa,
        qlr: fit.qlr,
        theta_breve: to_vec(&local.theta_breve),
        beta_hat: local.beta_hat,
        alpha_weak,
        alpha_strong,
        cross_section_fallback: part.fallback,
        candidates,
        strong,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiPoint {
    pub beta0: f64,
    pub qlr: f64,
    pub cv: f64,
    pub reject: bool,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub points: Vec<CiPoint>,
    pub accept_set: Vec<f64>,
    /// `[min, max]` of the accepted values.
    pub hull: Option<(f64, f64)>,
    /// Every grid value was rejected.
    pub empty: bool,
    /// Some rejected grid value lies inside the hull.
    pub hull_differs: bool,
}

/// Default grid: the identified set at the unrestricted estimate, widened by
/// a quarter of its length on each side, in steps of `step`.
pub fn default_ci_grid(obj: &Objective, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput("grid step must be positive".into()));
    }
    let fit = crate::estimation::estimate_unrestricted(obj)?;
    let (lo, hi) = obj.model.cross_section(&fit.theta_hat.pi)?;
    let hi = if hi.is_finite() { hi } else { lo + 10.0 };
    let pad = 0.25 * (hi - lo);
    let (lo, hi) = ((lo - pad).max(step), hi + pad);
    let count = ((hi - lo) / step).round() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

/// Confidence set for `beta` by inverting the test on `grid`.
pub fn invert_ci(obj: &Objective, grid: &[f64], opts: &RqlrOptions) -> Result<CiReport> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty beta0 grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let points = grid
        .par_iter()
        .map(|&b| {
            let r = rqlr_test(obj, &Restriction::beta(b), opts)?;
            Ok(CiPoint {
                beta0: b,
                qlr: r.qlr,
                cv: r.cv,
                reject: r.reject,
                infeasible: r.infeasible,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accept_set: Vec<f64> = points
        .iter()
        .filter(|p| !p.reject)
        .map(|p| p.beta0)
        .collect();
    let hull = accept_set
        .first()
        .map(|&lo| (lo, *accept_set.last().unwrap()));
    let hull_differs = hull.is_some_and(|(lo, hi)| {
        points
            .iter()
            .any(|p| p.reject && p.beta0 > lo && p.beta0 < hi)
    });
    Ok(CiReport {
        empty: accept_set.is_empty(),
        points,
        accept_set,
        hull,
        hull_differs,
    })
}

#[cfg(test)]
mod tests;
