//! Two correlated factors, five measures, loadings normalized to the identity
//! on the first two measures.
//!
//! `pi = (rho11, rho12, rho21, rho22, rho31, rho32, omega1..omega5, sigma12, chi)`
//! and `beta = sigma_2^2`, the variance of the second factor. `rho_jk` is the
//! covariance between measure `k` and measure `j + 2`.

use nalgebra::{DMatrix, DVector};

use super::{check_denominator, TwoFactorStructural};
use crate::error::{Error, Result};

pub(super) const R11: usize = 0;
pub(super) const R12: usize = 1;
pub(super) const R21: usize = 2;
pub(super) const R22: usize = 3;
pub(super) const R31: usize = 4;
pub(super) const R32: usize = 5;
pub(super) const W1: usize = 6;
pub(super) const W2: usize = 7;
pub(super) const W3: usize = 8;
pub(super) const W4: usize = 9;
pub(super) const S12: usize = 11;
pub(super) const CHI: usize = 12;
const BETA: usize = 13;

pub(super) const DELTA_CELLS: [(usize, usize); 15] = [
    (0, 2),
    (1, 2),
    (0, 3),
    (1, 3),
    (0, 4),
    (1, 4),
    (0, 0),
    (1, 1),
    (2, 2),
    (3, 3),
    (4, 4),
    (0, 1),
    (2, 3),
    (2, 4),
    (3, 4),
];

struct Parts {
    r11: f64,
    r12: f64,
    r21: f64,
    r22: f64,
    r31: f64,
    r32: f64,
    s12: f64,
    chi: f64,
}

fn parts(pi: &DVector<f64>) -> Parts {
    Parts {
        r11: pi[R11],
        r12: pi[R12],
        r21: pi[R21],
        r22: pi[R22],
        r31: pi[R31],
        r32: pi[R32],
        s12: pi[S12],
        chi: pi[CHI],
    }
}

fn denominators(p: &Parts, beta: f64) -> Result<(f64, f64)> {
    let d1 = beta * p.r21 - p.s12 * p.r22;
    let d2 = beta * p.r11 - p.s12 * p.r12;
    check_denominator(beta, d1)?;
    check_denominator(beta, d2)?;
    Ok((d1, d2))
}

pub(super) fn tau(pi: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    let p = parts(pi);
    let (d1, d2) = denominators(&p, beta)?;
    let s1 = p.r32 * p.r21 - p.r31 * p.r22;
    let s2 = p.r32 * p.r11 - p.r31 * p.r12;
    let e = beta * p.r31 - p.s12 * p.r32;
    Ok(DVector::from_vec(vec![
        (p.r12 * s1 + p.chi * e) / d1,
        (p.r22 * s2 + p.chi * e) / d2,
    ]))
}

pub(super) fn tau_jacobians(pi: &DVector<f64>, beta: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = parts(pi);
    let (d1, d2) = denominators(&p, beta)?;
    let s1 = p.r32 * p.r21 - p.r31 * p.r22;
    let s2 = p.r32 * p.r11 - p.r31 * p.r12;
    let e = beta * p.r31 - p.s12 * p.r32;
    let t1 = (p.r12 * s1 + p.chi * e) / d1;
    let t2 = (p.r22 * s2 + p.chi * e) / d2;

    // Gradients over (pi, beta) of numerators and denominators.
    let mut n1 = [0.0; 14];
    n1[R12] = s1;
    n1[R21] = p.r12 * p.r32;
    n1[R22] = -p.r12 * p.r31;
    n1[R31] = -p.r12 * p.r22 + p.chi * beta;
    n1[R32] = p.r12 * p.r21 - p.chi * p.s12;
    n1[S12] = -p.chi * p.r32;
    n1[CHI] = e;
    n1[BETA] = p.chi * p.r31;
    let mut dd1 = [0.0; 14];
    dd1[R21] = beta;
    dd1[R22] = -p.s12;
    dd1[S12] = -p.r22;
    dd1[BETA] = p.r21;

    let mut n2 = [0.0; 14];
    n2[R22] = s2;
    n2[R11] = p.r22 * p.r32;
    n2[R12] = -p.r22 * p.r31;
    n2[R31] = -p.r22 * p.r12 + p.chi * beta;
    n2[R32] = p.r22 * p.r11 - p.chi * p.s12;
    n2[S12] = -p.chi * p.r32;
    n2[CHI] = e;
    n2[BETA] = p.chi * p.r31;
    let mut dd2 = [0.0; 14];
    dd2[R11] = beta;
    dd2[R12] = -p.s12;
    dd2[S12] = -p.r12;
    dd2[BETA] = p.r11;

    let mut d_pi = DMatrix::zeros(2, 13);
    for k in 0..13 {
        d_pi[(0, k)] = (n1[k] - t1 * dd1[k]) / d1;
        d_pi[(1, k)] = (n2[k] - t2 * dd2[k]) / d2;
    }
    let d_beta = DVector::from_vec(vec![
        (n1[BETA] - t1 * dd1[BETA]) / d1,
        (n2[BETA] - t2 * dd2[BETA]) / d2,
    ]);
    Ok((d_pi, d_beta))
}

/// The four nonnegativity bounds on phi1..phi4 written in (pi, beta).
pub(super) fn bounds(pi: &DVector<f64>, beta: f64) -> DVector<f64> {
    let p = parts(pi);
    let (w1, w2, w3, w4) = (pi[W1], pi[W2], pi[W3], pi[W4]);
    let cross = p.r11 * p.r22 - p.r12 * p.r21;
    DVector::from_vec(vec![
        p.chi * p.s12 * p.s12 - p.s12 * (p.r11 * p.r22 + p.r12 * p.r21) + w1 * p.r22 * p.r12
            - (w1 * p.chi - p.r11 * p.r21) * beta,
        beta - w2,
        p.chi * (p.r11 * beta - p.s12 * p.r12)
            - w3 * (p.r21 * beta - p.s12 * p.r22)
            - p.r12 * cross,
        p.chi * (p.r21 * beta - p.s12 * p.r22) - w4 * (p.r11 * beta - p.s12 * p.r12)
            + p.r22 * cross,
    ])
}

pub(super) fn bounds_jacobian(pi: &DVector<f64>, beta: f64) -> DMatrix<f64> {
    let p = parts(pi);
    let (w1, w3, w4) = (pi[W1], pi[W3], pi[W4]);
    let mut jac = DMatrix::zeros(4, 14);

    jac[(0, R11)] = -p.s12 * p.r22 + p.r21 * beta;
    jac[(0, R12)] = -p.s12 * p.r21 + w1 * p.r22;
    jac[(0, R21)] = -p.s12 * p.r12 + p.r11 * beta;
    jac[(0, R22)] = -p.s12 * p.r11 + w1 * p.r12;
    jac[(0, W1)] = p.r22 * p.r12 - p.chi * beta;
    jac[(0, S12)] = 2.0 * p.chi * p.s12 - (p.r11 * p.r22 + p.r12 * p.r21);
    jac[(0, CHI)] = p.s12 * p.s12 - w1 * beta;
    jac[(0, BETA)] = -(w1 * p.chi - p.r11 * p.r21);

    jac[(1, W2)] = -1.0;
    jac[(1, BETA)] = 1.0;

    jac[(2, R11)] = p.chi * beta - p.r12 * p.r22;
    jac[(2, R12)] = -p.chi * p.s12 - p.r11 * p.r22 + 2.0 * p.r12 * p.r21;
    jac[(2, R21)] = -w3 * beta + p.r12 * p.r12;
    jac[(2, R22)] = w3 * p.s12 - p.r12 * p.r11;
    jac[(2, W3)] = -(p.r21 * beta - p.s12 * p.r22);
    jac[(2, S12)] = -p.chi * p.r12 + w3 * p.r22;
    jac[(2, CHI)] = p.r11 * beta - p.s12 * p.r12;
    jac[(2, BETA)] = p.chi * p.r11 - w3 * p.r21;

    jac[(3, R11)] = -w4 * beta + p.r22 * p.r22;
    jac[(3, R12)] = w4 * p.s12 - p.r22 * p.r21;
    jac[(3, R21)] = p.chi * beta - p.r22 * p.r12;
    jac[(3, R22)] = -p.chi * p.s12 + 2.0 * p.r11 * p.r22 - p.r12 * p.r21;
    jac[(3, W4)] = -(p.r11 * beta - p.s12 * p.r12);
    jac[(3, S12)] = -p.chi * p.r22 + w4 * p.r12;
    jac[(3, CHI)] = p.r21 * beta - p.s12 * p.r22;
    jac[(3, BETA)] = p.chi * p.r21 - w4 * p.r11;
    jac
}

/// `s1 = rho32 rho21 - rho31 rho22`, `s2 = rho32 rho11 - rho31 rho12`.
pub(super) fn id_strength(pi: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = parts(pi);
    let s = DVector::from_vec(vec![
        p.r32 * p.r21 - p.r31 * p.r22,
        p.r32 * p.r11 - p.r31 * p.r12,
    ]);
    let mut jac = DMatrix::zeros(2, 13);
    jac[(0, R21)] = p.r32;
    jac[(0, R22)] = -p.r31;
    jac[(0, R31)] = -p.r22;
    jac[(0, R32)] = p.r21;
    jac[(1, R11)] = p.r32;
    jac[(1, R12)] = -p.r31;
    jac[(1, R31)] = -p.r12;
    jac[(1, R32)] = p.r11;
    (s, jac)
}

/// Closed-form inverse of the reparameterization.
///
/// With `Sigma = [[sigma1^2, sigma12], [sigma12, beta]]` each loading row
/// satisfies `lambda_j = Sigma^{-1} rho_j`, and the `chi` equation
/// `chi = rho_1' Sigma^{-1} rho_2` is linear in `sigma1^2`.
pub(super) fn from_theta(pi: &DVector<f64>, beta: f64) -> Result<TwoFactorStructural> {
    let p = parts(pi);
    let denom = p.chi * beta - p.r12 * p.r22;
    if denom.abs() < super::TOL_DENOM {
        return Err(Error::NotInvertible(format!(
            "chi * beta - rho12 * rho22 = {denom:e} vanishes"
        )));
    }
    let sigma1 = (beta * p.r11 * p.r21 - p.s12 * (p.r11 * p.r22 + p.r12 * p.r21)
        + p.chi * p.s12 * p.s12)
        / denom;
    let det = sigma1 * beta - p.s12 * p.s12;
    if det.abs() < super::TOL_DENOM {
        return Err(Error::NotInvertible(format!(
            "implied factor covariance is singular (det = {det:e})"
        )));
    }
    let inv = [[beta / det, -p.s12 / det], [-p.s12 / det, sigma1 / det]];
    let rows = [(p.r11, p.r12), (p.r21, p.r22), (p.r31, p.r32)];
    let mut lambda = [[0.0; 2]; 3];
    let mut phi = [0.0; 5];
    phi[0] = pi[W1] - sigma1;
    phi[1] = pi[W2] - beta;
    for (j, &(a, b)) in rows.iter().enumerate() {
        lambda[j][0] = inv[0][0] * a + inv[0][1] * b;
        lambda[j][1] = inv[1][0] * a + inv[1][1] * b;
        phi[j + 2] = pi[W3 + j] - (a * lambda[j][0] + b * lambda[j][1]);
    }
    Ok(TwoFactorStructural {
        lambda,
        sigma: [[sigma1, p.s12], [p.s12, beta]],
        phi,
    })
}
