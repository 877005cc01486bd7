//! Strictly convex quadratic programs with a handful of linear inequalities.
//!
//! Solves `min 0.5 x'Px + c'x  s.t.  A x <= b` by enumerating active sets in
//! order of size. With `P` positive definite the KKT point is unique, so the
//! first active set whose solution is primal and dual feasible is optimal.
//! Every use in this crate has at most four inequality rows.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

const MAX_ROWS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// `0.5 x'Px + c'x` at the solution.
    pub value: f64,
    /// Lagrange multipliers, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
}

/// Factorization of `P` reused across many right-hand sides.
#[derive(Debug, Clone)]
pub struct QpFactor {
    chol: Cholesky<f64, Dyn>,
    p: DMatrix<f64>,
}

impl QpFactor {
    pub fn new(p: &DMatrix<f64>) -> Result<Self> {
        let p = symmetrize(p);
        let chol = Cholesky::new(p.clone()).ok_or(Error::SingularJ11 {
            condition: f64::INFINITY,
        })?;
        Ok(Self { chol, p })
    }

    pub fn solve(
        &self,
        c: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Result<QpSolution> {
        let d = self.p.nrows();
        let k = a.nrows();
        if c.len() != d || a.ncols() != d && k > 0 || b.len() != k {
            return Err(Error::DimensionMismatch {
                what: "quadratic program",
                expected: d,
                got: c.len(),
            });
        }
        if k > MAX_ROWS {
            return Err(Error::InvalidInput(format!(
                "{k} inequality rows exceed the enumeration limit"
            )));
        }
        let x0 = -self.chol.solve(c);
        let value = |x: &DVector<f64>| 0.5 * x.dot(&(&self.p * x)) + c.dot(x);
        let feas_tol = 1e-9 * (1.0 + b.amax());
        let feasible = |x: &DVector<f64>| k == 0 || (a * x - b).max() <= feas_tol;
        if feasible(&x0) {
            return Ok(QpSolution {
                value: value(&x0),
                x: x0,
                multipliers: DVector::zeros(k),
                active: vec![],
            });
        }
        // P^{-1} A'
        let pia = self.chol.solve(&a.transpose());
        let ax0 = a * &x0;
        let mut best: Option<(f64, QpSolution)> = None;
        let mut masks: Vec<u32> = (1..(1u32 << k)).collect();
        masks.sort_by_key(|m| (m.count_ones(), *m));
        for mask in masks {
            let set: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
            let s = set.len();
            let m = DMatrix::from_fn(s, s, |i, j| {
                a.row(set[i]).dot(&pia.column(set[j]).transpose())
            });
            let rhs = DVector::from_fn(s, |i, _| ax0[set[i]] - b[set[i]]);
            let Some(chol) = Cholesky::new(symmetrize(&m)) else {
                continue;
            };
            let lam = chol.solve(&rhs);
            if !lam.iter().all(|v| v.is_finite()) {
                continue;
            }
            let mut x = x0.clone();
            for (i, &row) in set.iter().enumerate() {
                x -= pia.column(row) * lam[i];
            }
            let mut multipliers = DVector::zeros(k);
            for (i, &row) in set.iter().enumerate() {
                multipliers[row] = lam[i];
            }
            let sol = QpSolution {
                value: value(&x),
                x,
                multipliers,
                active: set,
            };
            if !feasible(&sol.x) {
                continue;
            }
            let dual_tol = 1e-9 * (1.0 + lam.amax());
            if lam.iter().all(|&l| l >= -dual_tol) {
                return Ok(sol);
            }
            if best.as_ref().is_none_or(|(v, _)| sol.value < *v) {
                best = Some((sol.value, sol));
            }
        }
        best.map(|(_, s)| s).ok_or(Error::InfeasiblePolyhedron)
    }
}

pub fn solve_qp(
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution> {
    QpFactor::new(p)?.solve(c, a, b)
}
