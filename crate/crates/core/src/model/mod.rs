//! Factor models written in the `theta = (pi, beta)` coordinates.
//!
//! The moment vector is `delta(theta) = (pi, tau(pi, beta))`: every coordinate
//! of `pi` is itself a covariance, and `tau` collects the remaining entries of
//! the covariance matrix that depend on the weakly identified `beta`. The
//! nonnegativity of the error variances becomes `bounds(theta) <= 0`, and each
//! bound is affine in `beta` for fixed `pi`.

mod one_factor;
mod two_factor;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest denominator magnitude accepted in `tau`.
pub const TOL_DENOM: f64 = 1e-12;
/// Tolerance for open inequalities in structural conventions.
pub const TOL_STRICT: f64 = 1e-8;

/// Dimensions and moment layout of a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub d_pi: usize,
    pub d_beta: usize,
    pub d_tau: usize,
    pub d_delta: usize,
    /// Number of observed measures.
    pub p: usize,
    /// Covariance cell `(i, j)` (zero based, `i <= j`) of each delta coordinate.
    pub delta_index_map: &'static [(usize, usize)],
    pub n_bounds: usize,
}

static ONE_FACTOR_SPEC: ModelSpec = ModelSpec {
    d_pi: 5,
    d_beta: 1,
    d_tau: 1,
    d_delta: 6,
    p: 3,
    delta_index_map: &one_factor::DELTA_CELLS,
    n_bounds: 2,
};

static TWO_FACTOR_SPEC: ModelSpec = ModelSpec {
    d_pi: 13,
    d_beta: 1,
    d_tau: 2,
    d_delta: 15,
    p: 5,
    delta_index_map: &two_factor::DELTA_CELLS,
    n_bounds: 4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[serde(alias = "one-factor")]
    OneFactor,
    #[serde(alias = "two-factor")]
    TwoFactor,
}

/// A point `theta = (pi, beta)`. Both example models have scalar `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub pi: DVector<f64>,
    pub beta: f64,
}

impl ThetaPoint {
    pub fn new(pi: DVector<f64>, beta: f64) -> Self {
        Self { pi, beta }
    }

    pub fn from_slice(pi: &[f64], beta: f64) -> Self {
        Self {
            pi: DVector::from_column_slice(pi),
            beta,
        }
    }

    /// Stacks `(pi, beta)` into one vector.
    pub fn to_vector(&self) -> DVector<f64> {
        let d = self.pi.len();
        DVector::from_fn(d + 1, |i, _| if i < d { self.pi[i] } else { self.beta })
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let d = v.len() - 1;
        Self {
            pi: v.rows(0, d).into_owned(),
            beta: v[d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneFactorStructural {
    pub lambda2: f64,
    pub lambda3: f64,
    pub sigma2: f64,
    pub phi: [f64; 3],
}

/// Loadings of measures 3 to 5; measures 1 and 2 load on one factor each with
/// unit loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoFactorStructural {
    pub lambda: [[f64; 2]; 3],
    pub sigma: [[f64; 2]; 2],
    pub phi: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum StructuralParams {
    OneFactor(OneFactorStructural),
    TwoFactor(TwoFactorStructural),
}

impl StructuralParams {
    pub fn model(&self) -> Model {
        match self {
            StructuralParams::OneFactor(_) => Model::OneFactor,
            StructuralParams::TwoFactor(_) => Model::TwoFactor,
        }
    }

    /// Full `p x m` loading matrix including the normalization rows.
    pub fn loadings(&self) -> DMatrix<f64> {
        match self {
            StructuralParams::OneFactor(s) => {
                DMatrix::from_column_slice(3, 1, &[1.0, s.lambda2, s.lambda3])
            }
            StructuralParams::TwoFactor(s) => {
                let mut l = DMatrix::zeros(5, 2);
                l[(0, 0)] = 1.0;
                l[(1, 1)] = 1.0;
                for j in 0..3 {
                    l[(j + 2, 0)] = s.lambda[j][0];
                    l[(j + 2, 1)] = s.lambda[j][1];
                }
                l
            }
        }
    }

    pub fn factor_cov(&self) -> DMatrix<f64> {
        match self {
            StructuralParams::OneFactor(s) => DMatrix::from_element(1, 1, s.sigma2),
            StructuralParams::TwoFactor(s) => DMatrix::from_fn(2, 2, |i, j| s.sigma[i][j]),
        }
    }

    pub fn error_var(&self) -> DVector<f64> {
        match self {
            StructuralParams::OneFactor(s) => DVector::from_column_slice(&s.phi),
            StructuralParams::TwoFactor(s) => DVector::from_column_slice(&s.phi),
        }
    }

    /// `Lambda Sigma Lambda' + Phi`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.loadings();
        let mut c = &l * self.factor_cov() * l.transpose();
        for (i, v) in self.error_var().iter().enumerate() {
            c[(i, i)] += v;
        }
        c
    }

    /// Checks the variance restrictions and, for two factors, the sign
    /// conventions on the loadings.
    pub fn validate(&self) -> Result<()> {
        let tol = TOL_STRICT;
        if self.error_var().iter().any(|&v| !(v >= -tol)) {
            return Err(Error::InvalidStructural(
                "error variances must be nonnegative".into(),
            ));
        }
        let (lo, _) = crate::linalg::eigen_range(&self.factor_cov());
        if !(lo >= -tol) {
            return Err(Error::InvalidStructural(
                "factor covariance must be positive semidefinite".into(),
            ));
        }
        if let StructuralParams::TwoFactor(s) = self {
            let l = &s.lambda;
            if !(l[0][0] >= tol && l[1][0] >= tol) {
                return Err(Error::InvalidStructural(
                    "loadings of measures 3 and 4 on the first factor must be positive".into(),
                ));
            }
            if l[0][1].abs() < tol || l[1][1].abs() < tol {
                return Err(Error::InvalidStructural(
                    "loadings of measures 3 and 4 on the second factor must be nonzero".into(),
                ));
            }
        }
        Ok(())
    }

    /// The simulation design with `beta` in the interior of a nondegenerate
    /// identified interval: `[0.5, 2]` for one factor, `[2/3, 2]` for two.
    pub fn benchmark(model: Model) -> Self {
        match model {
            Model::OneFactor => StructuralParams::OneFactor(OneFactorStructural {
                lambda2: 1.0,
                lambda3: 0.0,
                sigma2: 1.0,
                phi: [1.0; 3],
            }),
            Model::TwoFactor => StructuralParams::TwoFactor(TwoFactorStructural {
                lambda: [[1.0; 2]; 3],
                sigma: [[1.0, 0.0], [0.0, 1.0]],
                phi: [1.0; 5],
            }),
        }
    }
}

pub(crate) fn check_denominator(beta: f64, denominator: f64) -> Result<()> {
    if denominator.abs() < TOL_DENOM || !denominator.is_finite() {
        Err(Error::SingularTau { beta, denominator })
    } else {
        Ok(())
    }
}

impl Model {
    pub fn spec(&self) -> &'static ModelSpec {
        match self {
            Model::OneFactor => &ONE_FACTOR_SPEC,
            Model::TwoFactor => &TWO_FACTOR_SPEC,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::OneFactor => "one_factor",
            Model::TwoFactor => "two_factor",
        }
    }

    /// Number of factors, which caps how many bounds can bind at once.
    pub fn n_factors(&self) -> usize {
        match self {
            Model::OneFactor => 1,
            Model::TwoFactor => 2,
        }
    }

    fn check_pi(&self, pi: &DVector<f64>) -> Result<()> {
        let d = self.spec().d_pi;
        if pi.len() != d {
            return Err(Error::DimensionMismatch {
                what: "pi",
                expected: d,
                got: pi.len(),
            });
        }
        Ok(())
    }

    pub fn tau(&self, pi: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
        self.check_pi(pi)?;
        match self {
            Model::OneFactor => one_factor::tau(pi, beta),
            Model::TwoFactor => two_factor::tau(pi, beta),
        }
    }

    /// `(d tau / d pi, d tau / d beta)`.
    pub fn tau_jacobians(
        &self,
        pi: &DVector<f64>,
        beta: f64,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_pi(pi)?;
        match self {
            Model::OneFactor => one_factor::tau_jacobians(pi, beta),
            Model::TwoFactor => two_factor::tau_jacobians(pi, beta),
        }
    }

    pub fn link_delta(&self, theta: &ThetaPoint) -> Result<DVector<f64>> {
        let tau = self.tau(&theta.pi, theta.beta)?;
        let spec = self.spec();
        let mut delta = DVector::zeros(spec.d_delta);
        delta.rows_mut(0, spec.d_pi).copy_from(&theta.pi);
        delta.rows_mut(spec.d_pi, spec.d_tau).copy_from(&tau);
        Ok(delta)
    }

    /// `D(theta) = d delta / d theta`, a `d_delta x (d_pi + 1)` matrix.
    pub fn link_jacobian(&self, theta: &ThetaPoint) -> Result<DMatrix<f64>> {
        let (d_pi_tau, d_beta_tau) = self.tau_jacobians(&theta.pi, theta.beta)?;
        let spec = self.spec();
        let mut d = DMatrix::zeros(spec.d_delta, spec.d_pi + 1);
        d.view_mut((0, 0), (spec.d_pi, spec.d_pi))
            .fill_with_identity();
        d.view_mut((spec.d_pi, 0), (spec.d_tau, spec.d_pi))
            .copy_from(&d_pi_tau);
        d.view_mut((spec.d_pi, spec.d_pi), (spec.d_tau, 1))
            .copy_from(&d_beta_tau);
        Ok(d)
    }

    pub fn bounds(&self, theta: &ThetaPoint) -> Result<DVector<f64>> {
        self.check_pi(&theta.pi)?;
        Ok(self.bounds_unchecked(&theta.pi, theta.beta))
    }

    fn bounds_unchecked(&self, pi: &DVector<f64>, beta: f64) -> DVector<f64> {
        match self {
            Model::OneFactor => one_factor::bounds(pi, beta),
            Model::TwoFactor => two_factor::bounds(pi, beta),
        }
    }

    /// `d l / d theta`, an `n_bounds x (d_pi + 1)` matrix.
    pub fn bounds_jacobian(&self, theta: &ThetaPoint) -> Result<DMatrix<f64>> {
        self.check_pi(&theta.pi)?;
        Ok(match self {
            Model::OneFactor => one_factor::bounds_jacobian(&theta.pi, theta.beta),
            Model::TwoFactor => two_factor::bounds_jacobian(&theta.pi, theta.beta),
        })
    }

    /// `{beta >= 0 : l(pi, beta) <= 0}`, exact because each bound is affine
    /// in `beta`.
    pub fn cross_section(&self, pi: &DVector<f64>) -> Result<(f64, f64)> {
        self.check_pi(pi)?;
        let at0 = self.bounds_unchecked(pi, 0.0);
        let slope = self.bounds_unchecked(pi, 1.0) - &at0;
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        let tol = 1e-12;
        for (a, b) in at0.iter().zip(slope.iter()) {
            if b.abs() <= tol {
                if *a > tol {
                    return Err(Error::EmptyCrossSection {
                        lo: f64::INFINITY,
                        hi: f64::NEG_INFINITY,
                    });
                }
            } else if *b > 0.0 {
                hi = hi.min(-a / b);
            } else {
                lo = lo.max(-a / b);
            }
        }
        if lo > hi + 1e-10 {
            return Err(Error::EmptyCrossSection { lo, hi });
        }
        Ok((lo, hi.max(lo)))
    }

    /// `c_hat(beta) = sqrt(n) (tau(pi*, beta) - tau(pi*, beta*))`.
    pub fn drift_c_hat(
        &self,
        pi_star: &DVector<f64>,
        beta_star: f64,
        beta: f64,
        n: usize,
    ) -> Result<DVector<f64>> {
        let t = self.tau(pi_star, beta)?;
        let t_star = self.tau(pi_star, beta_star)?;
        Ok((t - t_star) * (n as f64).sqrt())
    }

    /// Identification strength `s(pi)` (zero iff `beta` is unidentified) and
    /// its Jacobian with respect to `pi`.
    pub fn id_strength(&self, pi: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_pi(pi)?;
        Ok(match self {
            Model::OneFactor => one_factor::id_strength(pi),
            Model::TwoFactor => two_factor::id_strength(pi),
        })
    }

    pub fn to_theta(&self, s: &StructuralParams) -> Result<ThetaPoint> {
        if s.model() != *self {
            return Err(Error::InvalidInput(format!(
                "structural parameters for {} passed to {}",
                s.model().name(),
                self.name()
            )));
        }
        let cov = s.covariance();
        let spec = self.spec();
        let pi = DVector::from_fn(spec.d_pi, |k, _| {
            let (i, j) = spec.delta_index_map[k];
            cov[(i, j)]
        });
        let beta = match s {
            StructuralParams::OneFactor(s) => s.sigma2,
            StructuralParams::TwoFactor(s) => s.sigma[1][1],
        };
        Ok(ThetaPoint { pi, beta })
    }

    pub fn from_theta(&self, theta: &ThetaPoint) -> Result<StructuralParams> {
        self.check_pi(&theta.pi)?;
        let s = match self {
            Model::OneFactor => {
                StructuralParams::OneFactor(one_factor::from_theta(&theta.pi, theta.beta)?)
            }
            Model::TwoFactor => {
                let s = StructuralParams::TwoFactor(two_factor::from_theta(&theta.pi, theta.beta)?);
                // The closed form only uses some of the moment equations.
                let delta = self.link_delta(theta)?;
                let implied = self.delta_from_cov(&s.covariance());
                let scale = 1.0 + delta.amax();
                let resid = (&implied - &delta).amax();
                if !(resid <= 1e-8 * scale) {
                    return Err(Error::NotInvertible(format!("moment residual {resid:e}")));
                }
                s
            }
        };
        Ok(s)
    }

    /// Model-ordered entries of a `p x p` covariance matrix.
    pub fn delta_from_cov(&self, cov: &DMatrix<f64>) -> DVector<f64> {
        let map = self.spec().delta_index_map;
        DVector::from_fn(map.len(), |k, _| cov[map[k]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn theta(pi: &[f64], beta: f64) -> ThetaPoint {
        ThetaPoint::from_slice(pi, beta)
    }

    fn bench_pi(model: Model) -> DVector<f64> {
        model
            .to_theta(&StructuralParams::benchmark(model))
            .unwrap()
            .pi
    }

    /// Central differences of `f` over the stacked theta vector.
    fn fd_jacobian<F>(f: F, x: &DVector<f64>, rows: usize) -> DMatrix<f64>
    where
        F: Fn(&ThetaPoint) -> DVector<f64>,
    {
        let h = 1e-6;
        let mut jac = DMatrix::zeros(rows, x.len());
        for k in 0..x.len() {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += h;
            dn[k] -= h;
            let col =
                (f(&ThetaPoint::from_vector(&up)) - f(&ThetaPoint::from_vector(&dn))) / (2.0 * h);
            jac.set_column(k, &col);
        }
        jac
    }

    fn assert_close_rel(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        let scale = 1.0 + b.amax();
        assert!((a - b).amax() <= tol * scale, "analytic\n{a}\nnumeric\n{b}");
    }

    #[test]
    fn link_delta_examples() {
        let m = Model::OneFactor;
        let d = m
            .link_delta(&theta(&[1.0, 0.0, 2.0, 2.0, 2.0], 1.0))
            .unwrap();
        assert_eq!(d.as_slice(), &[1.0, 0.0, 2.0, 2.0, 2.0, 0.0]);
        let d = m
            .link_delta(&theta(&[3.0, 0.75, 2.5, 6.5, 0.625], 1.5))
            .unwrap();
        assert_relative_eq!(d[5], 1.5, epsilon = 1e-14);
        assert!(matches!(
            m.link_delta(&theta(&[1.0, 0.0], 1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn two_factor_tau_is_two_on_whole_slice() {
        // All third-measure covariances equal chi, so tau1 = tau2 = 2 for any beta.
        let pi = bench_pi(Model::TwoFactor);
        for beta in [2.0 / 3.0, 1.0, 2.0] {
            let t = Model::TwoFactor.tau(&pi, beta).unwrap();
            assert_relative_eq!(t[0], 2.0, epsilon = 1e-12);
            assert_relative_eq!(t[1], 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tau_examples() {
        let m = Model::OneFactor;
        let t = m
            .tau(&DVector::from_vec(vec![1.0, 0.5, 2.0, 2.0, 2.0]), 1.0)
            .unwrap();
        assert_relative_eq!(t[0], 0.5);
        let t = m
            .tau(&DVector::from_vec(vec![1.0, 0.0, 2.0, 2.0, 2.0]), 3.7)
            .unwrap();
        assert_eq!(t[0], 0.0);
        assert!(matches!(
            m.tau(&DVector::from_vec(vec![1.0, 0.5, 2.0, 2.0, 2.0]), 0.0),
            Err(Error::SingularTau { .. })
        ));
        let mut pi = bench_pi(Model::TwoFactor);
        pi[two_factor::S12] = 1.0; // beta * rho21 - sigma12 * rho22 = 0 at beta = 1
        assert!(matches!(
            Model::TwoFactor.tau(&pi, 1.0),
            Err(Error::SingularTau { .. })
        ));
    }

    #[test]
    fn tau_jacobian_examples() {
        let m = Model::OneFactor;
        let (dp, db) = m
            .tau_jacobians(&DVector::from_vec(vec![1.0, 0.0, 2.0, 2.0, 2.0]), 1.0)
            .unwrap();
        assert_eq!(
            dp.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(db[0], 0.0);
        let (_, db) = m
            .tau_jacobians(&DVector::from_vec(vec![3.0, 0.75, 2.5, 6.5, 0.625]), 1.5)
            .unwrap();
        assert_relative_eq!(db[0], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn bounds_examples() {
        let m = Model::OneFactor;
        let pi = [1.0, 0.0, 2.0, 2.0, 2.0];
        assert_eq!(m.bounds(&theta(&pi, 2.0)).unwrap().as_slice(), &[0.0, -3.0]);
        assert_eq!(m.bounds(&theta(&pi, 0.5)).unwrap().as_slice(), &[-1.5, 0.0]);

        let l = Model::TwoFactor
            .bounds(&ThetaPoint::new(bench_pi(Model::TwoFactor), 2.0 / 3.0))
            .unwrap();
        let expected = [0.0, -4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0];
        for (a, b) in l.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bounds_jacobian_examples() {
        let jac = Model::OneFactor
            .bounds_jacobian(&theta(&[1.0, 0.0, 2.0, 2.0, 2.0], 1.0))
            .unwrap();
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|i| jac.row(i).iter().copied().collect())
            .collect();
        assert_eq!(rows[0], vec![0.0, 0.0, -1.0, 0.0, 0.0, 1.0]);
        assert_eq!(rows[1], vec![2.0, 0.0, 0.0, -1.0, 0.0, -2.0]);
    }

    #[test]
    fn cross_section_examples() {
        let (lo, hi) = Model::OneFactor
            .cross_section(&bench_pi(Model::OneFactor))
            .unwrap();
        assert_relative_eq!(lo, 0.5, epsilon = 1e-12);
        assert_relative_eq!(hi, 2.0, epsilon = 1e-12);

        let (lo, hi) = Model::TwoFactor
            .cross_section(&bench_pi(Model::TwoFactor))
            .unwrap();
        assert_relative_eq!(lo, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 2.0, epsilon = 1e-12);

        let pi = DVector::from_vec(vec![3.0, 0.75, 2.5, 6.5, 0.625]);
        let (lo, hi) = Model::OneFactor.cross_section(&pi).unwrap();
        assert_relative_eq!(lo, 9.0 / 6.5, epsilon = 1e-12);
        assert_relative_eq!(hi, 2.5, epsilon = 1e-12);

        // rho1^2 / omega2 > omega1: no admissible beta.
        let pi = DVector::from_vec(vec![3.0, 0.0, 1.0, 2.0, 1.0]);
        assert!(matches!(
            Model::OneFactor.cross_section(&pi),
            Err(Error::EmptyCrossSection { .. })
        ));
    }

    #[test]
    fn drift_examples() {
        let m = Model::OneFactor;
        let pi = DVector::from_vec(vec![1.0, 0.3, 2.0, 2.0, 2.0]);
        assert_relative_eq!(
            m.drift_c_hat(&pi, 1.0, 2.0, 100).unwrap()[0],
            -1.5,
            epsilon = 1e-12
        );
        assert_eq!(m.drift_c_hat(&pi, 1.0, 1.0, 100).unwrap()[0], 0.0);
        let pi = bench_pi(m);
        for beta in [0.5, 1.3, 2.0] {
            assert_eq!(m.drift_c_hat(&pi, 1.0, beta, 500).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn id_strength_examples() {
        let (s, _) = Model::OneFactor
            .id_strength(&DVector::from_vec(vec![1.0, 0.3, 2.0, 2.0, 2.0]))
            .unwrap();
        assert_eq!(s[0], 0.3);
        let mut pi = bench_pi(Model::TwoFactor);
        let (s, _) = Model::TwoFactor.id_strength(&pi).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.0]);
        pi[two_factor::R32] = 2.0;
        let (s, jac) = Model::TwoFactor.id_strength(&pi).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 1.0]);
        let num = fd_jacobian(
            |t| Model::TwoFactor.id_strength(&t.pi).unwrap().0,
            &ThetaPoint::new(pi, 1.0).to_vector(),
            2,
        );
        assert_close_rel(&jac, &num.columns(0, 13).into_owned(), 1e-6);
    }

    #[test]
    fn to_theta_examples() {
        let s = StructuralParams::OneFactor(OneFactorStructural {
            lambda2: 2.0,
            lambda3: 0.5,
            sigma2: 1.5,
            phi: [1.0, 0.5, 0.25],
        });
        let t = Model::OneFactor.to_theta(&s).unwrap();
        let expected = [3.0, 0.75, 2.5, 6.5, 0.625];
        for (a, b) in t.pi.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
        assert_eq!(t.beta, 1.5);

        let t = Model::TwoFactor
            .to_theta(&StructuralParams::benchmark(Model::TwoFactor))
            .unwrap();
        let mut expected = vec![1.0; 6];
        expected.extend([2.0, 2.0, 3.0, 3.0, 3.0, 0.0, 2.0]);
        assert_eq!(t.pi.as_slice(), expected.as_slice());
        assert_eq!(t.beta, 1.0);
    }

    #[test]
    fn from_theta_two_factor_benchmark() {
        let s = StructuralParams::benchmark(Model::TwoFactor);
        let t = Model::TwoFactor.to_theta(&s).unwrap();
        let back = Model::TwoFactor.from_theta(&t).unwrap();
        assert_eq!(back, s);
        // Moving beta along the identified interval keeps the moments but
        // changes the structure; at the lower end phi1 vanishes.
        let low = Model::TwoFactor
            .from_theta(&ThetaPoint::new(t.pi.clone(), 2.0 / 3.0))
            .unwrap();
        assert_relative_eq!(low.error_var()[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_factor_bounds_are_scaled_error_variances() {
        let s = StructuralParams::TwoFactor(TwoFactorStructural {
            lambda: [[0.8, 1.3], [1.1, -0.6], [0.4, 0.9]],
            sigma: [[1.2, 0.3], [0.3, 0.7]],
            phi: [0.5, 0.6, 0.7, 0.8, 0.9],
        });
        let t = Model::TwoFactor.to_theta(&s).unwrap();
        let l = Model::TwoFactor.bounds(&t).unwrap();
        let StructuralParams::TwoFactor(p) = &s else {
            unreachable!()
        };
        let det = 1.2 * 0.7 - 0.3 * 0.3;
        let (l11, l21) = (p.lambda[0][0], p.lambda[1][0]);
        assert_relative_eq!(l[0], -l11 * l21 * p.phi[0] * det, epsilon = 1e-12);
        assert_relative_eq!(l[1], -p.phi[1], epsilon = 1e-12);
        assert_relative_eq!(l[2], -l21 * p.phi[2] * det, epsilon = 1e-12);
        assert_relative_eq!(l[3], -l11 * p.phi[3] * det, epsilon = 1e-12);
    }

    fn one_factor_structural() -> impl Strategy<Value = StructuralParams> {
        (
            0.2..3.0f64,
            -2.0..2.0f64,
            -2.0..2.0f64,
            prop::array::uniform3(0.0..2.0f64),
        )
            .prop_map(|(sigma2, lambda2, lambda3, phi)| {
                StructuralParams::OneFactor(OneFactorStructural {
                    lambda2,
                    lambda3,
                    sigma2,
                    phi,
                })
            })
    }

    fn two_factor_structural() -> impl Strategy<Value = StructuralParams> {
        (
            (0.3..2.0f64, 0.3..2.0f64, 0.3..2.0f64, 0.3..2.0f64),
            (0.3..2.0f64, 0.3..2.0f64, -0.8..0.8f64),
            (-1.5..1.5f64, -1.5..1.5f64),
            prop::array::uniform5(0.0..2.0f64),
            any::<bool>(),
        )
            .prop_map(
                |((l11, l21, a, b), (v1, v2, corr), (l31, l32), phi, flip)| {
                    let sign = if flip { -1.0 } else { 1.0 };
                    let c = corr * (v1 * v2).sqrt();
                    StructuralParams::TwoFactor(TwoFactorStructural {
                        lambda: [[l11, a], [l21, sign * b], [l31, l32]],
                        sigma: [[v1, c], [c, v2]],
                        phi,
                    })
                },
            )
    }

    fn structural() -> impl Strategy<Value = StructuralParams> {
        prop_oneof![one_factor_structural(), two_factor_structural()]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn link_matches_covariance(s in structural()) {
            let m = s.model();
            let t = m.to_theta(&s).unwrap();
            let cov = s.covariance();
            let delta = m.link_delta(&t).unwrap();
            for (k, &(i, j)) in m.spec().delta_index_map.iter().enumerate() {
                prop_assert!((delta[k] - cov[(i, j)]).abs() <= 1e-10 * (1.0 + cov[(i, j)].abs()));
            }
        }

        #[test]
        fn round_trip(s in structural()) {
            let m = s.model();
            let t = m.to_theta(&s).unwrap();
            let back = m.from_theta(&t).unwrap();
            let (a, b) = (Model::to_theta(&m, &back).unwrap(), t);
            prop_assert!((a.to_vector() - b.to_vector()).amax() <= 1e-10 * (1.0 + b.to_vector().amax()));
            prop_assert!((back.loadings() - s.loadings()).amax() <= 1e-8);
            prop_assert!((back.error_var() - s.error_var()).amax() <= 1e-8);
        }

        #[test]
        fn tau_and_bound_jacobians_match_differences(s in structural()) {
            let m = s.model();
            let t = m.to_theta(&s).unwrap();
            let x = t.to_vector();
            let spec = m.spec();
            let d = m.link_jacobian(&t).unwrap();
            let num = fd_jacobian(|p| m.link_delta(p).unwrap(), &x, spec.d_delta);
            assert_close_rel(&d, &num, 1e-5);
            let lj = m.bounds_jacobian(&t).unwrap();
            let num = fd_jacobian(|p| m.bounds(p).unwrap(), &x, spec.n_bounds);
            assert_close_rel(&lj, &num, 1e-5);
        }

        #[test]
        fn bounds_affine_in_beta(s in structural(), b0 in 0.1..3.0f64) {
            let m = s.model();
            let pi = m.to_theta(&s).unwrap().pi;
            let h = 0.37;
            let l = |b: f64| m.bounds(&ThetaPoint::new(pi.clone(), b)).unwrap();
            let second = l(b0 + h) - l(b0) * 2.0 + l(b0 - h);
            prop_assert!(second.amax() <= 1e-10 * (1.0 + l(b0).amax()));
        }

        #[test]
        fn cross_section_matches_grid_scan(s in structural()) {
            let m = s.model();
            let pi = m.to_theta(&s).unwrap().pi;
            let (lo, hi) = m.cross_section(&pi).unwrap();
            let step = 1e-3;
            let top = hi + 1.0;
            let inside: Vec<f64> = (0..=((top / step) as usize))
                .map(|k| k as f64 * step)
                .filter(|&b| m.bounds(&ThetaPoint::new(pi.clone(), b)).unwrap().max() <= 1e-12)
                .collect();
            prop_assume!(!inside.is_empty());
            prop_assert!((inside[0] - lo).abs() <= step + 1e-9);
            prop_assert!((inside[inside.len() - 1] - hi).abs() <= step + 1e-9);
        }

        #[test]
        fn one_factor_activity_matches_zero_variance(
            lambda2 in -2.0..2.0f64, sigma2 in 0.2..2.0f64, phi1 in 0.0..1.0f64, phi2 in 0.0..1.0f64,
            zero1 in any::<bool>(), zero2 in any::<bool>(),
        ) {
            let phi = [if zero1 { 0.0 } else { phi1 }, if zero2 { 0.0 } else { phi2 }, 1.0];
            let s = StructuralParams::OneFactor(OneFactorStructural { lambda2, lambda3: 0.3, sigma2, phi });
            let m = Model::OneFactor;
            let t = m.to_theta(&s).unwrap();
            let l = m.bounds(&t).unwrap();
            let back = m.from_theta(&t).unwrap().error_var();
            let tol = 1e-9;
            for j in 0..2 {
                prop_assert_eq!(l[j].abs() < tol, back[j].abs() < tol);
            }
        }
    }
}
