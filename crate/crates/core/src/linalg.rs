//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition number above which an information matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Ratio of extreme eigenvalues; infinite when the matrix is not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(m);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Adds `eps * I` with `eps = max(0, floor - lambda_min)`.
pub fn regularize_pd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let (lo, _) = eigen_range(&sym);
    let eps = (floor - lo).max(0.0);
    if eps > 0.0 {
        &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * eps
    } else {
        sym
    }
}

pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or(Error::SingularJ11 {
        condition: f64::INFINITY,
    })
}

/// Cholesky factor of a symmetric matrix that must be well conditioned.
pub fn checked_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularJ11 { condition });
    }
    cholesky(m)
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(m)?.inverse()))
}

/// Symmetric square root of a positive semidefinite matrix; negative
/// eigenvalues from roundoff are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let root = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Orthonormal basis (columns) of `{x : r x = 0}`.
pub fn null_space(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = r.ncols();
    if r.nrows() == 0 {
        return Ok(DMatrix::identity(d, d));
    }
    let rrt = r * r.transpose();
    let inv = Cholesky::new(symmetrize(&rrt))
        .ok_or_else(|| Error::InvalidInput("restriction rows are linearly dependent".into()))?
        .inverse();
    let proj = DMatrix::identity(d, d) - r.transpose() * inv * r;
    let eig = SymmetricEigen::new(symmetrize(&proj));
    let mut cols: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(v, _)| **v > 0.5)
        .map(|(v, c)| (*v, c.into_owned()))
        .collect();
    cols.sort_by(|a, b| b.0.total_cmp(&a.0));
    let expected = d - r.nrows();
    if cols.len() != expected {
        return Err(Error::InvalidInput(format!(
            "restriction rows have rank {} but {} rows were given",
            d - cols.len(),
            r.nrows()
        )));
    }
    let mut basis = DMatrix::zeros(d, expected);
    for (j, (_, c)) in cols.into_iter().enumerate() {
        // Fix the sign so the basis is deterministic.
        let pivot = c
            .iter()
            .cloned()
            .fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let c = if pivot < 0.0 { -c } else { c };
        basis.set_column(j, &c);
    }
    Ok(basis)
}

/// Minimum-norm solution of `r x = value`.
pub fn min_norm_solution(r: &DMatrix<f64>, value: &DVector<f64>) -> Result<DVector<f64>> {
    if r.nrows() == 0 {
        return Ok(DVector::zeros(r.ncols()));
    }
    let rrt = r * r.transpose();
    let chol = Cholesky::new(symmetrize(&rrt))
        .ok_or_else(|| Error::InvalidInput("restriction rows are linearly dependent".into()))?;
    Ok(r.transpose() * chol.solve(value))
}

/// Evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}
