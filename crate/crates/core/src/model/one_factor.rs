//! One factor, three measures.
//!
//! `pi = (rho1, rho2, omega1, omega2, omega3)`, `beta = sigma^2`,
//! `tau = rho1 * rho2 / beta`.

use nalgebra::{DMatrix, DVector};

use super::{check_denominator, OneFactorStructural};
use crate::error::{Error, Result};

pub(super) const RHO1: usize = 0;
pub(super) const RHO2: usize = 1;
pub(super) const OMEGA1: usize = 2;
pub(super) const OMEGA2: usize = 3;
pub(super) const OMEGA3: usize = 4;

pub(super) const DELTA_CELLS: [(usize, usize); 6] =
    [(0, 1), (0, 2), (0, 0), (1, 1), (2, 2), (1, 2)];

pub(super) fn tau(pi: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    check_denominator(beta, beta)?;
    Ok(DVector::from_element(1, pi[RHO1] * pi[RHO2] / beta))
}

pub(super) fn tau_jacobians(pi: &DVector<f64>, beta: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_denominator(beta, beta)?;
    let mut d_pi = DMatrix::zeros(1, 5);
    d_pi[(0, RHO1)] = pi[RHO2] / beta;
    d_pi[(0, RHO2)] = pi[RHO1] / beta;
    let d_beta = DVector::from_element(1, -pi[RHO1] * pi[RHO2] / (beta * beta));
    Ok((d_pi, d_beta))
}

/// `l1 = beta - omega1` (phi1 >= 0), `l2 = rho1^2 - omega2 * beta` (phi2 >= 0).
pub(super) fn bounds(pi: &DVector<f64>, beta: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        beta - pi[OMEGA1],
        pi[RHO1] * pi[RHO1] - pi[OMEGA2] * beta,
    ])
}

pub(super) fn bounds_jacobian(pi: &DVector<f64>, beta: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(2, 6);
    jac[(0, OMEGA1)] = -1.0;
    jac[(0, 5)] = 1.0;
    jac[(1, RHO1)] = 2.0 * pi[RHO1];
    jac[(1, OMEGA2)] = -beta;
    jac[(1, 5)] = -pi[OMEGA2];
    jac
}

pub(super) fn id_strength(pi: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut jac = DMatrix::zeros(1, 5);
    jac[(0, RHO2)] = 1.0;
    (DVector::from_element(1, pi[RHO2]), jac)
}

pub(super) fn from_theta(pi: &DVector<f64>, beta: f64) -> Result<OneFactorStructural> {
    if beta.abs() < super::TOL_DENOM {
        return Err(Error::NotInvertible(format!(
            "factor variance beta = {beta} is zero"
        )));
    }
    let (rho1, rho2) = (pi[RHO1], pi[RHO2]);
    Ok(OneFactorStructural {
        lambda2: rho1 / beta,
        lambda3: rho2 / beta,
        sigma2: beta,
        phi: [
            pi[OMEGA1] - beta,
            pi[OMEGA2] - rho1 * rho1 / beta,
            pi[OMEGA3] - rho2 * rho2 / beta,
        ],
    })
}
