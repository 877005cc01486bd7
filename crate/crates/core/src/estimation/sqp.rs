//! Damped Gauss-Newton with linearized bound constraints.
//!
//! Each iteration solves the quadratic program
//! `min g'd + 0.5 d'(G + mu diag(G)) d  s.t.  l + L d <= 0`
//! on an affine slice `theta = anchor + basis * y`, and accepts the step by a
//! trust ratio on the exact-penalty merit `q + nu * sum(max(l, 0))`.

use nalgebra::{DMatrix, DVector};

use super::Objective;
use crate::model::ThetaPoint;
use crate::qp::QpFactor;

pub(crate) const MAX_ITER: usize = 500;
pub(crate) const STEP_TOL: f64 = 1e-12;
pub(crate) const FEAS_TOL: f64 = 1e-9;
const MIN_BETA: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Fit {
    pub theta: ThetaPoint,
    pub q: f64,
    pub violation: f64,
    pub converged: bool,
}

pub(crate) struct Problem<'a> {
    pub obj: &'a Objective,
    pub anchor: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub bounded: bool,
}

struct State {
    theta: DVector<f64>,
    q: f64,
    grad: DVector<f64>,
    gn: DMatrix<f64>,
    ell: DVector<f64>,
    ell_jac: DMatrix<f64>,
}

fn violation(ell: &DVector<f64>) -> f64 {
    ell.iter().map(|v| v.max(0.0)).sum()
}

impl Problem<'_> {
    fn evaluate(&self, theta: DVector<f64>) -> Option<State> {
        let model = self.obj.model;
        let point = ThetaPoint::from_vector(&theta);
        if !(point.beta > MIN_BETA) || theta.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let delta = model.link_delta(&point).ok()?;
        let d = model.link_jacobian(&point).ok()? * &self.basis;
        let r = delta - &self.obj.m_hat;
        let wr = &self.obj.w * &r;
        let q = 0.5 * r.dot(&wr);
        let grad = d.transpose() * wr;
        let gn = crate::linalg::symmetrize(&(d.transpose() * &self.obj.w * &d));
        let (ell, ell_jac) = if self.bounded {
            (
                model.bounds(&point).ok()?,
                model.bounds_jacobian(&point).ok()? * &self.basis,
            )
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, self.basis.ncols()))
        };
        Some(State {
            theta,
            q,
            grad,
            gn,
            ell,
            ell_jac,
        })
    }

    /// Projects an arbitrary theta onto the slice.
    fn project(&self, theta: &ThetaPoint) -> DVector<f64> {
        let y = self.basis.transpose() * (theta.to_vector() - &self.anchor);
        &self.anchor + &self.basis * y
    }

    pub fn minimize(&self, start: &ThetaPoint) -> Option<Fit> {
        let mut state = self.evaluate(self.project(start))?;
        let k = self.basis.ncols();
        let mut mu = 1e-4;
        let mut nu: f64 = 1.0;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let diag_max = state.gn.diagonal().amax().max(1e-12);
            let scale = DVector::from_fn(k, |i, _| state.gn[(i, i)].max(1e-6 * diag_max));
            let mut p = state.gn.clone();
            for i in 0..k {
                p[(i, i)] += mu * scale[i];
            }
            let Ok(factor) = QpFactor::new(&p) else {
                mu *= 4.0;
                continue;
            };
            let step = factor
                .solve(&state.grad, &state.ell_jac, &(-&state.ell))
                .or_else(|_| factor.solve(&state.grad, &DMatrix::zeros(0, k), &DVector::zeros(0)));
            let Ok(sol) = step else { break };
            if sol.multipliers.len() > 0 {
                nu = nu.max(1.1 * sol.multipliers.amax());
            }
            let d = sol.x;
            let viol = violation(&state.ell);
            let lin_viol = violation(&(&state.ell + &state.ell_jac * &d));
            let pred = nu * (viol - lin_viol) - state.grad.dot(&d) - 0.5 * d.dot(&(&state.gn * &d));
            if pred <= 1e-22 + 1e-16 * state.q && mu <= 1.0 {
                converged = viol <= FEAS_TOL;
                break;
            }
            let dtheta = &self.basis * &d;
            let small = dtheta.amax() <= STEP_TOL * (1.0 + state.theta.amax());
            let trial = self.evaluate(&state.theta + dtheta);
            let ratio = trial.as_ref().map_or(f64::NEG_INFINITY, |t| {
                let actual = state.q + nu * viol - t.q - nu * violation(&t.ell);
                actual / pred.max(f64::MIN_POSITIVE)
            });
            if ratio > 1e-4 {
                state = trial.expect("ratio is finite only for a valid trial");
                if ratio > 0.75 {
                    mu = (mu / 3.0).max(1e-12);
                } else if ratio < 0.25 {
                    mu *= 2.0;
                }
                if small && mu <= 1.0 {
                    converged = violation(&state.ell) <= FEAS_TOL;
                    break;
                }
            } else {
                mu *= 4.0;
                if mu > 1e16 {
                    break;
                }
            }
        }
        let violation = violation(&state.ell);
        Some(Fit {
            theta: ThetaPoint::from_vector(&state.theta),
            q: state.q,
            violation,
            converged: converged && violation <= FEAS_TOL,
        })
    }
}
