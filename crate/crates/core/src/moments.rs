//! Sample covariance moments and their fourth-moment variance estimate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, regularize_pd, spd_inverse};
use crate::model::{Model, StructuralParams};
use crate::rng::substream;

/// Eigenvalue floor applied to the moment variance before inversion.
pub const PD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub model: Model,
    pub n: usize,
    /// Model-ordered entries of the covariance matrix (divisor `n`).
    pub m_hat: DVector<f64>,
    /// Estimated asymptotic variance of `sqrt(n) (m_hat - delta)`.
    pub v_bar_hat: DMatrix<f64>,
}

impl SampleMoments {
    /// `W = V^{-1}` after lifting the spectrum to [`PD_FLOOR`]. The second
    /// element reports whether regularization was needed.
    pub fn weight_matrix(&self) -> Result<(DMatrix<f64>, bool)> {
        let reg = regularize_pd(&self.v_bar_hat, PD_FLOOR);
        let changed = reg != crate::linalg::symmetrize(&self.v_bar_hat);
        Ok((spd_inverse(&reg)?, changed))
    }
}

/// Centered covariance `S` of `data` and the variance estimate of the entries
/// selected by `cells`.
///
/// `V[k, l] = n^{-1} sum_i (x_ia x_ib - S_ab)(x_ic x_id - S_cd)` for
/// `cells[k] = (a, b)` and `cells[l] = (c, d)`, with `x` centered.
pub fn covariance_moments(
    data: &DMatrix<f64>,
    cells: &[(usize, usize)],
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (n, p) = data.shape();
    if n < 2 {
        return Err(Error::InsufficientData { n, p });
    }
    for (idx, v) in data.iter().enumerate() {
        if !v.is_finite() {
            // Column-major storage.
            return Err(Error::NonFiniteData {
                row: idx % n,
                col: idx / n,
            });
        }
    }
    let nf = n as f64;
    let mean = data.row_mean();
    let mut x = data.clone();
    for mut row in x.row_iter_mut() {
        row -= &mean;
    }
    let s = x.transpose() * &x / nf;
    let m = DVector::from_fn(cells.len(), |k, _| s[cells[k]]);
    let u = DMatrix::from_fn(n, cells.len(), |i, k| {
        let (a, b) = cells[k];
        x[(i, a)] * x[(i, b)] - m[k]
    });
    let v = crate::linalg::symmetrize(&(u.transpose() * &u / nf));
    Ok((s, m, v))
}

/// Sample moments of an `n x p` data matrix in the model's ordering.
pub fn compute_moments(model: Model, data: &DMatrix<f64>) -> Result<SampleMoments> {
    let (n, p) = data.shape();
    let spec = model.spec();
    if p != spec.p {
        return Err(Error::DimensionMismatch {
            what: "data columns",
            expected: spec.p,
            got: p,
        });
    }
    if n <= p + 1 {
        return Err(Error::InsufficientData { n, p });
    }
    let (_, m_hat, v_bar_hat) = covariance_moments(data, spec.delta_index_map)?;
    Ok(SampleMoments {
        model,
        n,
        m_hat,
        v_bar_hat,
    })
}

/// Normal factors and errors drawn from a structural point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub structural: StructuralParams,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn model(&self) -> Model {
        self.structural.model()
    }
}

/// `X_i = Lambda Sigma^{1/2} z_i + Phi^{1/2} e_i` with standard normal `z`, `e`.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<DMatrix<f64>> {
    spec.structural.validate()?;
    let loadings = spec.structural.loadings();
    let factor = &loadings * psd_sqrt(&spec.structural.factor_cov());
    let err_sd = spec.structural.error_var().map(|v| v.max(0.0).sqrt());
    let (p, m) = factor.shape();
    let mut rng = substream(spec.seed, &[]);
    let mut x = DMatrix::zeros(spec.n, p);
    let mut z = DVector::zeros(m);
    for i in 0..spec.n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let f = &factor * &z;
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, j)] = f[j] + err_sd[j] * e;
        }
    }
    Ok(x)
}

/// Population moments `delta(theta)` and the normal-theory variance of the
/// sample covariances, `n Cov(S_ij, S_kl) = C_ik C_jl + C_il C_jk`.
pub fn population_moments(structural: &StructuralParams) -> (DVector<f64>, DMatrix<f64>) {
    let model = structural.model();
    let c = structural.covariance();
    let map = model.spec().delta_index_map;
    let m = model.delta_from_cov(&c);
    let v = DMatrix::from_fn(map.len(), map.len(), |a, b| {
        let (i, j) = map[a];
        let (k, l) = map[b];
        c[(i, k)] * c[(j, l)] + c[(i, l)] * c[(j, k)]
    });
    (m, v)
}

/// Reads a comma-separated file with a header row and returns the listed
/// columns, in the given order, as an `n x p` matrix. An empty list selects
/// every column.
pub fn read_csv(path: &Path, columns: &[String]) -> Result<DMatrix<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
        .clone();
    if columns.is_empty() {
        let all: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        if all.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}: no columns",
                path.display()
            )));
        }
        return read_csv(path, &all);
    }
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| {
            header.iter().position(|h| h.trim() == c).ok_or_else(|| {
                Error::InvalidInput(format!("column `{c}` not found in {}", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        for (col, &k) in idx.iter().enumerate() {
            let field = record.get(k).unwrap_or("").trim();
            let v: f64 = field
                .parse()
                .map_err(|_| Error::NonFiniteData { row: r, col })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteData { row: r, col });
            }
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, idx.len(), &values))
}
