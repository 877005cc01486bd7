//! Polyhedral local parameter sets and projections onto them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::QpFactor;

/// `{x = B y : b + A x <= 0}`, where the basis `B` defaults to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub basis: Option<DMatrix<f64>>,
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self { a, b, basis: None }
    }

    pub fn unconstrained(dim: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
            basis: None,
        }
    }

    /// Linear subspace spanned by the columns of `basis`.
    pub fn subspace(basis: DMatrix<f64>) -> Self {
        let dim = basis.nrows();
        Self {
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
            basis: Some(basis),
        }
    }

    pub fn with_basis(mut self, basis: DMatrix<f64>) -> Self {
        self.basis = Some(basis);
        self
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let inequalities = self.n_constraints() == 0 || (&self.b + &self.a * x).max() <= tol;
        let in_span = self.basis.as_ref().is_none_or(|basis| {
            let y = basis.transpose() * x;
            (basis * y - x).amax() <= tol
        });
        inequalities && in_span
    }

    /// The slice `{x_1 : (x_1, 0) in P}` through the first `d` coordinates,
    /// for a polyhedron whose basis (if any) already fixes the remaining ones
    /// at zero.
    pub fn leading_slice(&self, d: usize) -> Result<Polyhedron> {
        let basis = match &self.basis {
            None => None,
            Some(basis) => {
                if basis.rows(d, basis.nrows() - d).amax() > 1e-12 {
                    return Err(Error::InvalidInput(
                        "polyhedron basis does not fix trailing coordinates".into(),
                    ));
                }
                let lead = basis.rows(0, d).into_owned();
                // The identity on the leading block needs no basis.
                if lead.ncols() == d && (&lead - DMatrix::identity(d, d)).amax() <= 1e-12 {
                    None
                } else {
                    Some(lead)
                }
            }
        };
        Ok(Polyhedron {
            a: self.a.columns(0, d).into_owned(),
            b: self.b.clone(),
            basis,
        })
    }
}

/// Projection `min_{x in P} (z - x)' J (z - x)` for one `J` and many `z`.
#[derive(Debug, Clone)]
pub struct QpMin {
    j: DMatrix<f64>,
    basis: DMatrix<f64>,
    jb: DMatrix<f64>,
    a_y: DMatrix<f64>,
    rhs: DVector<f64>,
    factor: QpFactor,
}

impl QpMin {
    pub fn new(j: &DMatrix<f64>, poly: &Polyhedron) -> Result<Self> {
        let d = j.nrows();
        if poly.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "polyhedron",
                expected: d,
                got: poly.dim(),
            });
        }
        let basis = poly
            .basis
            .clone()
            .unwrap_or_else(|| DMatrix::identity(d, d));
        let jb = j * &basis;
        let p = basis.transpose() * &jb * 2.0;
        Ok(Self {
            j: j.clone(),
            a_y: &poly.a * &basis,
            rhs: -&poly.b,
            factor: QpFactor::new(&p)?,
            basis,
            jb,
        })
    }

    pub fn solve(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let c = self.jb.transpose() * z * -2.0;
        let sol = self.factor.solve(&c, &self.a_y, &self.rhs)?;
        let x = &self.basis * sol.x;
        let r = z - &x;
        Ok((r.dot(&(&self.j * &r)), x))
    }
}

/// `min_{x in P} (z - x)' J (z - x)` and its minimizer.
pub fn qp_min(
    j: &DMatrix<f64>,
    z: &DVector<f64>,
    poly: &Polyhedron,
) -> Result<(f64, DVector<f64>)> {
    QpMin::new(j, poly)?.solve(z)
}
