use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::estimation::estimate_unrestricted;
use crate::limitlaw::simulate_quantile;
use crate::model::{OneFactorStructural, StructuralParams};
use crate::moments::{compute_moments, simulate_dgp, DgpSpec};

fn benchmark_objective(n: usize, seed: u64) -> Objective {
    let data = simulate_dgp(&DgpSpec {
        structural: StructuralParams::benchmark(Model::OneFactor),
        n,
        seed,
    })
    .unwrap();
    Objective::new(&compute_moments(Model::OneFactor, &data).unwrap()).unwrap()
}

fn quick_opts(model: Model, case: Case) -> RqlrOptions {
    RqlrOptions {
        draws: 2000,
        ..RqlrOptions::defaults(model, case, 0.05, 17).unwrap()
    }
}

#[test]
fn budget_defaults_and_validation() {
    let w1 = AlphaBudget::default_for(Case::W1, 0.05).unwrap();
    assert_abs_diff_eq!(w1.alpha_c, 0.005, epsilon = 1e-15);
    assert_abs_diff_eq!(w1.alpha_psi, 0.005, epsilon = 1e-15);
    assert_abs_diff_eq!(w1.alpha_w1(), 0.04, epsilon = 1e-15);
    assert_abs_diff_eq!(w1.alpha_s(), 0.04, epsilon = 1e-15);
    let w2 = AlphaBudget::default_for(Case::W2, 0.05).unwrap();
    assert_abs_diff_eq!(w2.alpha_c, 0.01, epsilon = 1e-15);
    assert_abs_diff_eq!(w2.alpha_psi, 0.005, epsilon = 1e-15);
    assert_abs_diff_eq!(w2.alpha_w2(), 0.04, epsilon = 1e-15);
    assert!(AlphaBudget::new(0.05, 0.0, 0.0).is_ok());
    assert!(AlphaBudget::new(0.05, 0.05, 0.0).is_err());
    assert!(AlphaBudget::new(0.05, -0.01, 0.0).is_err());
    assert!(AlphaBudget::new(0.05, 0.0, 0.03).is_err());
    // alpha_W2 = 0.05 exceeds alpha_S = 0.03.
    let b = AlphaBudget::new(0.05, 0.0, 0.01).unwrap();
    assert!(b.check_case(Case::W2).is_err());
    assert!(b.check_case(Case::W1).is_err());
    assert!(w1.check_case(Case::W1).is_ok() && w1.check_case(Case::W2).is_err());
}

#[test]
fn classification() {
    assert_eq!(classify(&Restriction::beta(1.0)).unwrap(), Case::W1);
    let r = Restriction::affine_pi(
        DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 1.0, -1.0, 0.0]),
        DVector::zeros(1),
    );
    assert_eq!(classify(&r).unwrap(), Case::W2);
    assert!(classify(&Restriction::none()).is_err());
}

#[test]
fn normal_quantile_and_pi_interval() {
    assert_abs_diff_eq!(z_quantile(0.9975), 2.807, epsilon = 5e-4);
    assert_abs_diff_eq!(z_quantile(0.995), 2.576, epsilon = 5e-4);
    // se = sqrt(v / n) = 0.05 at n = 400.
    let (lo, hi) = pi_interval(0.1, 1.0, 400, 0.005);
    assert_abs_diff_eq!(lo, 0.1 - 2.807 * 0.05, epsilon = 5e-5);
    assert_abs_diff_eq!(hi, 0.1 + 2.807 * 0.05, epsilon = 5e-5);
    let widths: Vec<f64> = [0.1, 0.01, 1e-4, 1e-8]
        .iter()
        .map(|&a| pi_interval(0.0, 1.0, 400, a).1)
        .collect();
    assert!(widths.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn lbar_example() {
    let ell = DVector::from_vec(vec![-0.1, -0.3]) * 10.0;
    let (plus, minus) = lbar_pm(&ell, &DVector::from_vec(vec![0.2, 0.2]), 2.576);
    assert_abs_diff_eq!(plus[0], -0.4848, epsilon = 1e-12);
    assert_abs_diff_eq!(plus[1], -2.4848, epsilon = 1e-12);
    assert_abs_diff_eq!(minus[0], -1.5152, epsilon = 1e-12);
    assert_abs_diff_eq!(minus[1], -3.5152, epsilon = 1e-12);
}

#[test]
fn ics_examples() {
    let n = 500usize;
    let one = |root_n_s: f64| DVector::from_vec(vec![root_n_s / (n as f64).sqrt()]);
    assert!(ics_statistic(
        Model::OneFactor,
        &one(0.5),
        &DVector::from_vec(vec![1.0]),
        n
    ));
    assert!(!ics_statistic(
        Model::OneFactor,
        &one(100.0),
        &DVector::from_vec(vec![1.0]),
        n
    ));
    assert!(ics_statistic(
        Model::TwoFactor,
        &DVector::zeros(2),
        &DVector::from_vec(vec![1.0, 2.0]),
        n
    ));
    assert!(!ics_statistic(
        Model::TwoFactor,
        &DVector::from_vec(vec![1.0, 0.0]),
        &DVector::from_vec(vec![1.0, 1.0]),
        n
    ));
}

#[test]
fn one_factor_pi_hat_grid() {
    let obj = benchmark_objective(500, 1);
    let breve = crate::estimation::estimate_breve(&obj, 1.0).unwrap();
    let grid = build_pi_hat(&obj, &breve, 0.005, 21).unwrap();
    assert_eq!(grid.len(), 21);
    assert_eq!(grid[10], breve.pi);
    for p in &grid {
        for k in [0, 2, 3, 4] {
            assert_eq!(p[k], breve.pi[k]);
        }
    }
    let j_inv = spd_inverse(&breve_information(&obj, &breve).unwrap()).unwrap();
    let (lo, hi) = pi_interval(breve.pi[1], j_inv[(1, 1)], obj.n, 0.005);
    assert_abs_diff_eq!(grid[0][1], lo, epsilon = 1e-12);
    assert_abs_diff_eq!(grid[20][1], hi, epsilon = 1e-12);
    let wider = build_pi_hat(&obj, &breve, 0.0005, 21).unwrap();
    assert!(wider[0][1] < grid[0][1] && wider[20][1] > grid[20][1]);
}

fn two_factor_objective(n: usize, seed: u64) -> Objective {
    let data = simulate_dgp(&DgpSpec {
        structural: StructuralParams::benchmark(Model::TwoFactor),
        n,
        seed,
    })
    .unwrap();
    Objective::new(&compute_moments(Model::TwoFactor, &data).unwrap()).unwrap()
}

#[test]
fn two_factor_pi_hat_satisfies_both_bands() {
    let obj = two_factor_objective(1000, 3);
    let breve = crate::estimation::estimate_breve(&obj, 1.0).unwrap();
    let grid = build_pi_hat(&obj, &breve, 0.005, 9).unwrap();
    assert_eq!(grid.len(), 81);
    assert!(grid.contains(&breve.pi));

    let j_inv = spd_inverse(&breve_information(&obj, &breve).unwrap()).unwrap();
    let b = &breve.pi;
    let (s, jac) = obj.model.id_strength(b).unwrap();
    let v: Vec<f64> = (0..2)
        .map(|i| (jac.row(i) * &j_inv * jac.row(i).transpose())[(0, 0)])
        .collect();
    let z = z_quantile(1.0 - 0.005 / 4.0);
    let root_n = (obj.n as f64).sqrt();
    for p in &grid {
        let band1 = root_n * (p[5] * b[2] - p[4] * b[3] - s[0]).abs() - v[0].sqrt() * z;
        let band2 = root_n * (p[5] * b[0] - p[4] * b[1] - s[1]).abs() - v[1].sqrt() * z;
        assert!(band1 <= 1e-9 && band2 <= 1e-9, "{band1} {band2}");
        for k in (0..13).filter(|k| *k != 4 && *k != 5) {
            assert_eq!(p[k], b[k]);
        }
    }
    // The center satisfies both with slack zero.
    let c = &grid[40];
    assert_abs_diff_eq!(c[5] * b[2] - c[4] * b[3] - s[0], 0.0, epsilon = 1e-12);
}

#[test]
fn boundary_sets_contain_origin() {
    for seed in 0..20 {
        let obj = benchmark_objective(300, 100 + seed);
        for beta0 in [0.4, 1.0, 2.2] {
            let restriction = Restriction::beta(beta0);
            let breve = crate::estimation::estimate_breve(&obj, beta0).unwrap();
            let (psi, psi_r) = build_boundary_sets(&obj, &breve, 0.005, &restriction).unwrap();
            assert!(psi_r.contains(&DVector::zeros(6), 0.0));
            assert!(psi.contains(&DVector::zeros(6), 0.0));
            // Psi^r fixes the beta direction; Psi is the looser of the two.
            let basis = psi_r.basis.as_ref().unwrap();
            assert_eq!(basis.row(5).amax(), 0.0);
            assert!(psi.b.iter().zip(psi_r.b.iter()).all(|(u, r)| u <= r));
        }
    }
}

#[test]
fn w2_boundary_set_imposes_restriction_rows() {
    let obj = benchmark_objective(400, 5);
    let r1 = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 1.0, -1.0, 0.0]);
    let restriction = Restriction::affine_pi(r1.clone(), DVector::zeros(1));
    let breve = crate::estimation::estimate_breve(&obj, 1.0).unwrap();
    let (_, psi_r) = build_boundary_sets(&obj, &breve, 0.005, &restriction).unwrap();
    let basis = psi_r.basis.unwrap();
    assert_eq!(basis.ncols(), 5);
    assert!((r1 * basis.rows(0, 5)).amax() < 1e-12);
}

#[test]
fn strong_critical_value_is_chi_square() {
    let structural = StructuralParams::OneFactor(OneFactorStructural {
        lambda2: 1.0,
        lambda3: 1.0,
        sigma2: 1.0,
        phi: [1.0, 1.0, 1.0],
    });
    let data = simulate_dgp(&DgpSpec {
        structural,
        n: 5000,
        seed: 2,
    })
    .unwrap();
    let obj = Objective::new(&compute_moments(Model::OneFactor, &data).unwrap()).unwrap();
    let restriction = Restriction::beta(1.0);
    let breve = crate::estimation::estimate_breve(&obj, 1.0).unwrap();
    assert!(!ics_kappa(&obj, &breve).unwrap());
    let opts = RqlrOptions {
        // A vanishing alpha_psi leaves far-away bounds slack at this n.
        budget: AlphaBudget::new(0.05, 1e-9, 1e-9).unwrap(),
        draws: 20_000,
        ..RqlrOptions::defaults(Model::OneFactor, Case::W1, 0.05, 4).unwrap()
    };
    let fit = LocalFit {
        theta_breve: breve.clone(),
        beta_hat: 1.0,
        pi_unrestricted: breve.pi.clone(),
    };
    let cv = robust_critical_value(&obj, &restriction, &fit, &opts).unwrap();
    assert!(!cv.kappa && cv.q_weak.is_none());
    assert!((cv.cv - 3.841).abs() < 0.15, "{cv:?}");
}

#[test]
fn singleton_nuisance_set_is_a_single_quantile() {
    let obj = benchmark_objective(500, 6);
    let restriction = Restriction::beta(1.0);
    let breve = crate::estimation::estimate_breve(&obj, 1.0).unwrap();
    let fit = LocalFit {
        theta_breve: breve.clone(),
        beta_hat: 1.0,
        pi_unrestricted: breve.pi.clone(),
    };
    let opts = RqlrOptions {
        pi_grid_size: 1,
        force_kappa: Some(true),
        ..quick_opts(Model::OneFactor, Case::W1)
    };
    let cv = robust_critical_value(&obj, &restriction, &fit, &opts).unwrap();
    assert_eq!(cv.n_candidates, 1);

    let (psi, psi_r) =
        build_boundary_sets(&obj, &breve, opts.budget.alpha_psi, &restriction).unwrap();
    let (lo, hi) = obj.model.cross_section(&breve.pi).unwrap();
    let spec = LimitLawSpec {
        model: obj.model,
        n: obj.n,
        pi_hat: breve.pi.clone(),
        beta_hat: 1.0,
        h: obj.w.clone(),
        v: obj.w.clone(),
        psi,
        psi_r,
        r1: None,
        case: Case::W1,
        beta_grid: linspace(lo, hi, BETA_GRID_POINTS),
        refine_tol: Some(REFINE_TOL),
    };
    let cand = DriftCandidate {
        pi_star: breve.pi.clone(),
        beta_star: 1.0,
    };
    let q = simulate_quantile(
        &spec,
        &cand,
        opts.budget.alpha_w1(),
        opts.draws,
        derive_seed(opts.seed, &[0]),
    )
    .unwrap();
    assert_eq!(cv.cv, q.quantile.max(0.0));
}

#[test]
fn supremum_grows_with_nested_candidates() {
    let obj = benchmark_objective(500, 7);
    let breve = crate::estimation::estimate_breve(&obj, 1.5).unwrap();
    let restriction = Restriction::beta(1.5);
    let (psi, psi_r) = build_boundary_sets(&obj, &breve, 0.005, &restriction).unwrap();
    let (lo, hi) = obj.model.cross_section(&breve.pi).unwrap();
    let spec = LimitLawSpec {
        model: obj.model,
        n: obj.n,
        pi_hat: breve.pi.clone(),
        beta_hat: 1.5,
        h: obj.w.clone(),
        v: obj.w.clone(),
        psi,
        psi_r,
        r1: None,
        case: Case::W1,
        beta_grid: linspace(lo, hi, BETA_GRID_POINTS),
        refine_tol: Some(REFINE_TOL),
    };
    let small = build_pi_hat(&obj, &breve, 0.05, 5).unwrap();
    let mut large = small.clone();
    large.extend(build_pi_hat(&obj, &breve, 0.0005, 9).unwrap());
    let sup = |pis: &[DVector<f64>]| {
        let cands: Vec<_> = pis
            .iter()
            .map(|p| DriftCandidate {
                pi_star: p.clone(),
                beta_star: 1.5,
            })
            .collect();
        crate::limitlaw::simulate_quantiles(&spec, &cands, 0.04, 2000, 5)
            .unwrap()
            .iter()
            .map(|q| q.quantile)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    assert!(sup(&large) >= sup(&small));
}

#[test]
fn test_accepts_at_unrestricted_estimate() {
    let obj = benchmark_objective(500, 8);
    let fit = estimate_unrestricted(&obj).unwrap();
    let beta_hat = fit.theta_hat.beta;
    let report = rqlr_test(
        &obj,
        &Restriction::beta(beta_hat),
        &quick_opts(Model::OneFactor, Case::W1),
    )
    .unwrap();
    assert!(report.qlr < 1e-6, "{}", report.qlr);
    assert!(!report.reject);
    assert!(report.cv >= 0.0);
    assert_eq!(report.reject, report.qlr > report.cv);
}

#[test]
fn infeasible_null_is_rejected_with_flag() {
    let obj = benchmark_objective(300, 9);
    let report = rqlr_test(
        &obj,
        &Restriction::beta(-1.0),
        &quick_opts(Model::OneFactor, Case::W1),
    )
    .unwrap();
    assert!(report.infeasible && report.reject);
    assert!(report.critical_value.is_none());
}

#[test]
fn test_is_deterministic() {
    let obj = benchmark_objective(400, 10);
    let opts = quick_opts(Model::OneFactor, Case::W1);
    let a = rqlr_test(&obj, &Restriction::beta(1.7), &opts).unwrap();
    let b = rqlr_test(&obj, &Restriction::beta(1.7), &opts).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn w2_test_runs_and_is_consistent() {
    let obj = benchmark_objective(500, 11);
    // omega_2 = omega_3 is false in the benchmark (2 vs 1), so compare to a true one.
    let r1 = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 1.0, -1.0, 0.0]);
    let restriction = Restriction::affine_pi(r1, DVector::zeros(1));
    let opts = RqlrOptions {
        beta_star_points: 3,
        pi_grid_size: 5,
        ..quick_opts(Model::OneFactor, Case::W2)
    };
    let report = rqlr_test(&obj, &restriction, &opts).unwrap();
    let cv = report.critical_value.as_ref().unwrap();
    assert_eq!(cv.case, Case::W2);
    assert!(cv.kappa);
    assert!(cv.n_candidates <= 15 && cv.n_candidates > 0);
    assert!(report.cv >= 0.0);
    assert_eq!(report.reject, report.qlr > report.cv);
}

#[test]
fn ci_inversion_reports_accept_set() {
    let obj = benchmark_objective(500, 12);
    let opts = RqlrOptions {
        draws: 1000,
        ..quick_opts(Model::OneFactor, Case::W1)
    };
    let grid = [0.3, 0.7, 1.0, 1.4, 1.8, 3.0];
    let ci = invert_ci(&obj, &grid, &opts).unwrap();
    assert_eq!(ci.points.len(), grid.len());
    assert!(ci.accept_set.contains(&1.0));
    assert!(!ci.accept_set.contains(&3.0));
    let (lo, hi) = ci.hull.unwrap();
    assert!(lo <= 1.0 && hi >= 1.0);
    assert!(!ci.empty);
}

#[test]
fn ci_empty_flag() {
    let obj = benchmark_objective(500, 13);
    let opts = RqlrOptions {
        draws: 1000,
        ..quick_opts(Model::OneFactor, Case::W1)
    };
    let ci = invert_ci(&obj, &[-1.0, 6.0], &opts).unwrap();
    assert!(ci.empty && ci.hull.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn centered_grid_contains_center(center in -5.0f64..5.0, half in 0.0f64..3.0, count in 1usize..30) {
        let g = centered_grid(center, half, count);
        prop_assert!(g.len() % 2 == 1);
        prop_assert_eq!(g[g.len() / 2], center);
        prop_assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn decision_is_invariant_to_rescaling_the_data() {
    let data = simulate_dgp(&DgpSpec {
        structural: StructuralParams::benchmark(Model::OneFactor),
        n: 500,
        seed: 21,
    })
    .unwrap();
    let scale = 3.0;
    let scaled = &data * scale;
    let obj = Objective::new(&compute_moments(Model::OneFactor, &data).unwrap()).unwrap();
    let obj_scaled = Objective::new(&compute_moments(Model::OneFactor, &scaled).unwrap()).unwrap();
    let opts = quick_opts(Model::OneFactor, Case::W1);
    for beta0 in [0.45, 1.2, 2.3] {
        let a = rqlr_test(&obj, &Restriction::beta(beta0), &opts).unwrap();
        let b = rqlr_test(
            &obj_scaled,
            &Restriction::beta(beta0 * scale * scale),
            &opts,
        )
        .unwrap();
        assert!(
            (a.qlr - b.qlr).abs() <= 1e-6 * (1.0 + a.qlr),
            "{} vs {}",
            a.qlr,
            b.qlr
        );
        assert!(
            (a.cv - b.cv).abs() <= 1e-6 * (1.0 + a.cv),
            "{} vs {}",
            a.cv,
            b.cv
        );
        assert_eq!(a.reject, b.reject);
    }
}

#[test]
fn quantile_table_matches_critical_value() {
    let obj = benchmark_objective(500, 12);
    let restriction = Restriction::beta(1.2);
    let opts = RqlrOptions {
        max_rule: true,
        ..quick_opts(Model::OneFactor, Case::W1)
    };
    let report = rqlr_test(&obj, &restriction, &opts).unwrap();
    let cv = report.critical_value.unwrap();
    let table = limit_quantiles(&obj, &restriction, &opts).unwrap();
    assert_eq!(table.case, Case::W1);
    assert_eq!(table.qlr, report.qlr);
    assert_eq!(table.candidates.len(), cv.n_candidates);
    let sup = table
        .candidates
        .iter()
        .map(|c| c.quantile)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(Some(sup), cv.q_weak);
    assert_eq!(table.strong.as_ref().map(|s| s.quantile), cv.q_strong);
    let min = table
        .candidates
        .iter()
        .chain(table.strong.iter())
        .map(|c| c.min_draw)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(Some(min), cv.min_draw);
    assert!(min >= -1e-9);
}
