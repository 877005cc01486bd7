//! Weak-identification limits: the concentrated process `q~W(beta)` and its
//! infimum over the identified set.

use nalgebra::{DMatrix, DVector};

use super::{Case, DriftCandidate, LimitLawSpec, QpMin};
use crate::error::{Error, Result};
use crate::linalg::{checked_cholesky, cholesky, spd_inverse, symmetrize};
use crate::model::Model;

/// Brackets refined per infimum.
const REFINE_BRACKETS: usize = 3;

/// `q~W(beta)` and, when restriction rows are supplied, `q~W,r(beta)` for
/// the drift of `candidate`, with `D_1` and `J_11` evaluated at `pi_hat`.
pub fn concentrated_qw(
    spec: &LimitLawSpec,
    candidate: &DriftCandidate,
    y: &DVector<f64>,
    beta: f64,
) -> Result<(f64, Option<f64>)> {
    let local = Local::new(spec)?;
    let tau_star = spec.model.tau(&candidate.pi_star, candidate.beta_star)?;
    local.eval(&candidate.pi_star, &tau_star, y, beta, true)
}

/// Pieces shared by every evaluation away from the grid.
struct Local {
    model: Model,
    sqrt_n: f64,
    pi_hat: DVector<f64>,
    h: DMatrix<f64>,
    r1: Option<DMatrix<f64>>,
    d_pi: usize,
    d_tau: usize,
}

impl Local {
    fn new(spec: &LimitLawSpec) -> Result<Self> {
        let ms = spec.model.spec();
        if let Some(r1) = &spec.r1 {
            if r1.ncols() != ms.d_pi {
                return Err(Error::DimensionMismatch {
                    what: "R1 columns",
                    expected: ms.d_pi,
                    got: r1.ncols(),
                });
            }
        }
        Ok(Self {
            model: spec.model,
            sqrt_n: (spec.n as f64).sqrt(),
            pi_hat: spec.pi_hat.clone(),
            h: symmetrize(&spec.h),
            r1: spec.r1.clone().filter(|r| r.nrows() > 0),
            d_pi: ms.d_pi,
            d_tau: ms.d_tau,
        })
    }

    /// Direct evaluation. `checked` enforces the conditioning limit on `J_11`.
    fn eval(
        &self,
        pi_star: &DVector<f64>,
        tau_star: &DVector<f64>,
        y: &DVector<f64>,
        beta: f64,
        checked: bool,
    ) -> Result<(f64, Option<f64>)> {
        let (t, _) = self.model.tau_jacobians(&self.pi_hat, beta)?;
        let c = (self.model.tau(pi_star, beta)? - tau_star) * self.sqrt_n;
        let mut d1 = DMatrix::zeros(self.d_pi + self.d_tau, self.d_pi);
        d1.view_mut((0, 0), (self.d_pi, self.d_pi))
            .fill_with_identity();
        d1.view_mut((self.d_pi, 0), (self.d_tau, self.d_pi))
            .copy_from(&t);
        let j = d1.transpose() * &self.h * &d1;
        let chol = if checked {
            checked_cholesky(&j)?
        } else {
            cholesky(&j)?
        };
        let mut g = DVector::zeros(self.d_pi + self.d_tau);
        g.rows_mut(self.d_pi, self.d_tau).copy_from(&c);
        let hg = &self.h * &g;
        let w = d1.transpose() * (y + &hg);
        let jw = chol.solve(&w);
        let qw = 0.5 * g.dot(&hg) + y.dot(&g) - 0.5 * w.dot(&jw);
        let qwr = match &self.r1 {
            None => None,
            Some(r1) => {
                let rz = r1 * &jw;
                let rjr = r1 * chol.solve(&r1.transpose());
                Some(qw + 0.5 * rz.dot(&cholesky(&rjr)?.solve(&rz)))
            }
        };
        Ok((qw, qwr))
    }
}

struct GridPoint {
    beta: f64,
    /// `(d tau / d pi)'`.
    tt: DMatrix<f64>,
    jinv: DMatrix<f64>,
    /// `(R_1 J^-1 R_1')^-1`.
    m: Option<DMatrix<f64>>,
}

/// Candidate data on the grid. `konst` is infinite where the drift cannot be
/// evaluated.
struct CandidateGrid {
    tau_star: DVector<f64>,
    anchor: usize,
    konst: Vec<f64>,
    c: Vec<DVector<f64>>,
    b: Vec<DVector<f64>>,
    rjb: Vec<DVector<f64>>,
}

/// `A = inf over the psi_1 slice of Psi^r of (Z_1 - psi)' J_11 (Z_1 - psi) - Z_1' J_11 Z_1`
/// at `beta*`; `-Z_1' J_11 Z_1` is the value of `2 q~W(beta*)`.
struct Anchor {
    tt: DMatrix<f64>,
    jinv: DMatrix<f64>,
    qp: QpMin,
}

pub(super) struct WeakEngine {
    local: Local,
    case: Case,
    refine_tol: Option<f64>,
    grid: Vec<GridPoint>,
    candidates: Vec<DriftCandidate>,
    cand_grid: Vec<CandidateGrid>,
    anchors: Vec<Anchor>,
}

impl WeakEngine {
    pub(super) fn new(spec: &LimitLawSpec, candidates: &[DriftCandidate]) -> Result<Self> {
        let local = Local::new(spec)?;
        let (d_pi, d_tau) = (local.d_pi, local.d_tau);
        let h_pt = local.h.view((0, d_pi), (d_pi, d_tau)).into_owned();
        let h_tt = local.h.view((d_pi, d_pi), (d_tau, d_tau)).into_owned();

        let mut grid = Vec::with_capacity(spec.beta_grid.len());
        for &beta in &spec.beta_grid {
            let Ok((t, _)) = spec.model.tau_jacobians(&spec.pi_hat, beta) else {
                continue;
            };
            let j = info_matrix(&local.h, &t, d_pi);
            if checked_cholesky(&j).is_err() {
                continue;
            }
            let jinv = spd_inverse(&j)?;
            let m = match &local.r1 {
                None => None,
                Some(r1) => Some(spd_inverse(&(r1 * &jinv * r1.transpose()))?),
            };
            grid.push(GridPoint {
                beta,
                tt: t.transpose(),
                jinv,
                m,
            });
        }
        if grid.is_empty() {
            return Err(Error::InvalidInput(
                "no usable beta grid point for the weak-case limit".into(),
            ));
        }

        let mut anchors = Vec::new();
        let mut anchor_betas: Vec<f64> = Vec::new();
        let psi_r1 = if spec.case == Case::W1 {
            Some(spec.psi_r.leading_slice(d_pi)?)
        } else {
            None
        };
        let mut cand_grid = Vec::with_capacity(candidates.len());
        for cand in candidates {
            if cand.pi_star.len() != d_pi {
                return Err(Error::DimensionMismatch {
                    what: "pi_star",
                    expected: d_pi,
                    got: cand.pi_star.len(),
                });
            }
            let tau_star = spec.model.tau(&cand.pi_star, cand.beta_star)?;
            let anchor = if spec.case == Case::W1 {
                match anchor_betas.iter().position(|b| *b == cand.beta_star) {
                    Some(i) => i,
                    None => {
                        let (t, _) = spec.model.tau_jacobians(&spec.pi_hat, cand.beta_star)?;
                        let j = info_matrix(&local.h, &t, d_pi);
                        checked_cholesky(&j)?;
                        anchors.push(Anchor {
                            tt: t.transpose(),
                            jinv: spd_inverse(&j)?,
                            qp: QpMin::new(&j, psi_r1.as_ref().expect("slice built for W1"))?,
                        });
                        anchor_betas.push(cand.beta_star);
                        anchors.len() - 1
                    }
                }
            } else {
                0
            };
            let mut cg = CandidateGrid {
                tau_star: tau_star.clone(),
                anchor,
                konst: Vec::with_capacity(grid.len()),
                c: Vec::with_capacity(grid.len()),
                b: Vec::with_capacity(grid.len()),
                rjb: Vec::with_capacity(grid.len()),
            };
            for gp in &grid {
                let c = match spec.model.tau(&cand.pi_star, gp.beta) {
                    Ok(t) => (t - &tau_star) * local.sqrt_n,
                    Err(_) => {
                        cg.konst.push(f64::INFINITY);
                        cg.c.push(DVector::zeros(d_tau));
                        cg.b.push(DVector::zeros(d_pi));
                        cg.rjb.push(DVector::zeros(0));
                        continue;
                    }
                };
                let b = &h_pt * &c + &gp.tt * (&h_tt * &c);
                let jb = &gp.jinv * &b;
                cg.konst.push(0.5 * c.dot(&(&h_tt * &c)) - 0.5 * b.dot(&jb));
                cg.rjb.push(
                    local
                        .r1
                        .as_ref()
                        .map_or_else(|| DVector::zeros(0), |r1| r1 * &jb),
                );
                cg.c.push(c);
                cg.b.push(b);
            }
            cand_grid.push(cg);
        }
        Ok(Self {
            local,
            case: spec.case,
            refine_tol: spec.refine_tol,
            grid,
            candidates: candidates.to_vec(),
            cand_grid,
            anchors,
        })
    }

    pub(super) fn draw(&self, _spec: &LimitLawSpec, y: &DVector<f64>) -> Result<Vec<f64>> {
        let (d_pi, d_tau) = (self.local.d_pi, self.local.d_tau);
        let y_pi = y.rows(0, d_pi);
        let y_tau = y.rows(d_pi, d_tau);

        let mut u = Vec::with_capacity(self.grid.len());
        let mut base = Vec::with_capacity(self.grid.len());
        let mut ru = Vec::with_capacity(self.grid.len());
        for gp in &self.grid {
            let a = y_pi + &gp.tt * y_tau;
            let uk = &gp.jinv * &a;
            base.push(-0.5 * a.dot(&uk));
            ru.push(self.local.r1.as_ref().map(|r1| r1 * &uk));
            u.push(uk);
        }

        // (A, 2 q~W(beta*)) per anchor.
        let anchor_terms = self
            .anchors
            .iter()
            .map(|an| {
                let a = y_pi + &an.tt * y_tau;
                let z = -(&an.jinv * &a);
                let zjz = a.dot(&(&an.jinv * &a));
                Ok((an.qp.solve(&z)?.0 - zjz, -zjz))
            })
            .collect::<Result<Vec<_>>>()?;

        let betas: Vec<f64> = self.grid.iter().map(|g| g.beta).collect();
        let mut out = Vec::with_capacity(self.candidates.len());
        let mut vals_w = vec![0.0; self.grid.len()];
        let mut vals_r = vec![0.0; self.grid.len()];
        for (cand, cg) in self.candidates.iter().zip(&self.cand_grid) {
            for k in 0..self.grid.len() {
                if cg.konst[k].is_infinite() {
                    vals_w[k] = f64::INFINITY;
                    vals_r[k] = f64::INFINITY;
                    continue;
                }
                vals_w[k] =
                    2.0 * (cg.konst[k] + y_tau.dot(&cg.c[k]) - u[k].dot(&cg.b[k]) + base[k]);
                vals_r[k] = match (&self.grid[k].m, &ru[k]) {
                    (Some(m), Some(ruk)) => {
                        let r = ruk + &cg.rjb[k];
                        vals_w[k] + r.dot(&(m * &r))
                    }
                    _ => vals_w[k],
                };
            }
            let exact = |beta: f64, restricted: bool| -> f64 {
                match self.local.eval(&cand.pi_star, &cg.tau_star, y, beta, false) {
                    Ok((qw, qwr)) => 2.0 * if restricted { qwr.unwrap_or(qw) } else { qw },
                    Err(_) => f64::INFINITY,
                }
            };
            let value = match self.case {
                Case::W1 => {
                    let (a_term, at_star) = anchor_terms[cg.anchor];
                    let (inf_w, _) = profile_min(
                        &betas,
                        &vals_w,
                        |b| exact(b, false),
                        at_star,
                        self.refine_tol,
                    );
                    a_term - inf_w.min(at_star)
                }
                Case::W2 if self.local.r1.is_none() => 0.0,
                Case::W2 => {
                    let (inf_r, beta_r) = profile_min(
                        &betas,
                        &vals_r,
                        |b| exact(b, true),
                        f64::INFINITY,
                        self.refine_tol,
                    );
                    let (inf_w, _) = profile_min(
                        &betas,
                        &vals_w,
                        |b| exact(b, false),
                        f64::INFINITY,
                        self.refine_tol,
                    );
                    // q~W <= q~W,r pointwise, so checking the restricted
                    // minimizer keeps the difference nonnegative.
                    inf_r - inf_w.min(exact(beta_r, false)).min(inf_r)
                }
                Case::S => unreachable!("strong case handled by the caller"),
            };
            out.push(value);
        }
        Ok(out)
    }
}

fn info_matrix(h: &DMatrix<f64>, t: &DMatrix<f64>, d_pi: usize) -> DMatrix<f64> {
    let d_tau = t.nrows();
    let mut d1 = DMatrix::zeros(d_pi + d_tau, d_pi);
    d1.view_mut((0, 0), (d_pi, d_pi)).fill_with_identity();
    d1.view_mut((d_pi, 0), (d_tau, d_pi)).copy_from(t);
    symmetrize(&(d1.transpose() * h * &d1))
}

/// Infimum of a function known on a grid, refined by Brent's method around
/// the best local minima. Brackets whose curvature-based lower bound cannot
/// beat `min(best, cap)` are skipped.
pub(super) fn profile_min(
    betas: &[f64],
    vals: &[f64],
    f: impl Fn(f64) -> f64,
    cap: f64,
    tol: Option<f64>,
) -> (f64, f64) {
    let n = vals.len();
    let mut best = (f64::INFINITY, f64::NAN);
    let mut minima = Vec::new();
    for k in 0..n {
        let v = vals[k];
        if !v.is_finite() {
            continue;
        }
        if v < best.0 {
            best = (v, betas[k]);
        }
        let left = if k > 0 { vals[k - 1] } else { f64::INFINITY };
        let right = if k + 1 < n {
            vals[k + 1]
        } else {
            f64::INFINITY
        };
        if v <= left && v <= right {
            minima.push(k);
        }
    }
    let Some(tol) = tol else { return best };
    // Near a smooth minimum a bracket of relative width sqrt(tol) pins the
    // value to about tol.
    let tol = tol.sqrt();
    minima.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    for &k in minima.iter().take(REFINE_BRACKETS) {
        let lo = if k > 0 && vals[k - 1].is_finite() {
            k - 1
        } else {
            k
        };
        let hi = if k + 1 < n && vals[k + 1].is_finite() {
            k + 1
        } else {
            k
        };
        if lo == hi {
            continue;
        }
        let margin = if lo < k && hi > k {
            vals[lo] - 2.0 * vals[k] + vals[hi]
        } else {
            (vals[lo] - vals[hi]).abs()
        };
        if vals[k] - margin >= best.0.min(cap) {
            continue;
        }
        let (x, fx) = if lo < k && hi > k {
            brent_min(
                &f,
                (betas[lo], betas[hi]),
                (betas[k], vals[k]),
                Some([(betas[lo], vals[lo]), (betas[hi], vals[hi])]),
                tol,
            )
        } else {
            brent_min(&f, (betas[lo], betas[hi]), (betas[k], vals[k]), None, tol)
        };
        if fx < best.0 {
            best = (fx, x);
        }
    }
    best
}

/// Brent's minimizer on `[a, b]` started from `(x, f(x))`. Two further known
/// points let the first step be parabolic.
pub(super) fn brent_min(
    f: impl Fn(f64) -> f64,
    (mut a, mut b): (f64, f64),
    (x0, fx0): (f64, f64),
    known: Option<[(f64, f64); 2]>,
    tol: f64,
) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    const MAX_ITER: usize = 100;
    let (mut x, mut fx) = (x0, fx0);
    let ((mut w, mut fw), (mut v, mut fv), mut e) = match known {
        Some([p, q]) if p.1 <= q.1 => (p, q, b - a),
        Some([p, q]) => (q, p, b - a),
        None => ((x0, fx0), (x0, fx0), 0.0),
    };
    let mut d = 0.0_f64;
    for _ in 0..MAX_ITER {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, w, x) = (w, x, u);
            (fv, fw, fx) = (fw, fx, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, w) = (w, u);
                (fv, fw) = (fw, fu);
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}
