mod common;

use mtlasso::admm::{admm_solve, admm_w_update, AdmmConfig};
use mtlasso::model::{kkt_residuals, loss_gradient, proximal_residual, ActiveIndexSet};
use mtlasso::pal::{ssnpal_full_solve, PalConfig};
use mtlasso::projection::project;
use mtlasso::sieving::{as_admm_solve, as_ssnpal_solve, initial_active_set, solve_path, violation_set, PathOptions, ReducedSolver};
use mtlasso::{CoefMatrix, MultiTaskProblem, SolveStatus, Triple};
use nalgebra::{DMatrix, DVector};

fn loss(problem: &MultiTaskProblem, w: &CoefMatrix) -> f64 {
    let fit = mtlasso::model::apply_design(problem, w).unwrap();
    0.5 * fit.iter().zip(problem.y()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Accelerated projected gradient with step `1/L`, run long enough to serve as
/// a reference optimum on small instances.
fn fista(problem: &MultiTaskProblem, gamma: f64, iters: usize) -> CoefMatrix {
    let l = problem
        .blocks()
        .iter()
        .map(|b| {
            let m = DMatrix::from_row_slice(b.nrows(), b.ncols(), b.as_slice().unwrap());
            (m.transpose() * &m).symmetric_eigen().eigenvalues.max()
        })
        .fold(0.0, f64::max);
    let (d, n) = (problem.d(), problem.n());
    let mut w = CoefMatrix::zeros(d, n);
    let mut v = w.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let g = loss_gradient(problem, &v).unwrap();
        let step: Vec<f64> = v.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a - b / l).collect();
        let next = project(&CoefMatrix::from_column_major(d, n, step).unwrap(), gamma).w;
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / tn;
        let vv = next.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a + beta * (a - b)).collect();
        v = CoefMatrix::from_column_major(d, n, vv).unwrap();
        w = next;
        t = tn;
    }
    w
}

fn rel(a: &CoefMatrix, b: &CoefMatrix) -> f64 {
    a.dist(b) / (1.0 + b.frobenius_norm())
}

#[test]
fn w_update_matches_dense_solve() {
    let mut rng = common::rng(31);
    let problem = common::random_problem(&mut rng, 6, 3, 9);
    let z = common::random_coef(&mut rng, 6, 3, 1.0);
    let u = common::random_coef(&mut rng, 6, 3, 1.0);
    let sigma = 3.0;
    let (w, converged) = admm_w_update(&problem, &z, &u, sigma, 1e-10).unwrap();
    assert!(converged);
    for j in 0..3 {
        let b = problem.block(j);
        let x = DMatrix::from_row_slice(b.nrows(), b.ncols(), b.as_slice().unwrap());
        let lhs = x.transpose() * &x + DMatrix::identity(6, 6) * sigma;
        let y = DVector::from_column_slice(problem.y_segment(j));
        let zu: Vec<f64> = z.column(j).iter().zip(u.column(j)).map(|(a, b)| sigma * a - b).collect();
        let rhs = x.transpose() * y + DVector::from_vec(zu);
        let want = lhs.cholesky().unwrap().solve(&rhs);
        for i in 0..6 {
            assert!((w.get(i, j) - want[i]).abs() <= 1e-8 * (1.0 + want[i].abs()));
        }
    }
}

#[test]
fn full_solvers_agree_with_reference() {
    let mut rng = common::rng(32);
    for gamma in [0.2, 1.0, 5.0] {
        let problem = common::random_problem(&mut rng, 5, 4, 12);
        let reference = fista(&problem, gamma, 20000);
        let zero = Triple::zeros(5, 4);
        let pal = ssnpal_full_solve(&problem, gamma, &zero, &PalConfig { tol: 1e-10, ..PalConfig::default() }).unwrap();
        let admm = admm_solve(&problem, gamma, &zero, &AdmmConfig { tol: 1e-9, sigma: 1.0, ..AdmmConfig::default() }).unwrap();
        assert_eq!(pal.status, SolveStatus::Converged);
        assert_eq!(admm.status, SolveStatus::Converged);
        assert!(rel(&pal.triple.w, &reference) <= 1e-6, "pal {}", rel(&pal.triple.w, &reference));
        assert!(rel(&admm.triple.w, &reference) <= 1e-6, "admm {}", rel(&admm.triple.w, &reference));
        let f = loss(&problem, &reference);
        assert!((loss(&problem, &pal.triple.w) - f).abs() <= 1e-8 * (1.0 + f));
        let r = proximal_residual(&problem, &pal.triple.w, gamma).unwrap();
        assert!(r.frobenius_norm() <= 1e-7 * (1.0 + pal.triple.w.frobenius_norm()));
    }
}

#[test]
fn reported_residual_matches_recomputation() {
    let mut rng = common::rng(33);
    let problem = common::random_problem(&mut rng, 4, 3, 8);
    let out = ssnpal_full_solve(&problem, 0.5, &Triple::zeros(4, 3), &PalConfig { tol: 1e-8, ..PalConfig::default() }).unwrap();
    let t = &out.triple;
    let again = kkt_residuals(&problem, &t.w, &t.z, &t.u, 0.5, None).unwrap();
    assert!((again.r_kkt - out.residuals.r_kkt).abs() <= 1e-14);
    assert!(again.r_kkt <= 1e-8);
}

#[test]
fn kkt_start_needs_no_iterations() {
    let mut rng = common::rng(34);
    let problem = common::random_problem(&mut rng, 4, 3, 8);
    let first = ssnpal_full_solve(&problem, 0.5, &Triple::zeros(4, 3), &PalConfig { tol: 1e-9, ..PalConfig::default() }).unwrap();
    let again = ssnpal_full_solve(&problem, 0.5, &first.triple, &PalConfig { tol: 1e-8, ..PalConfig::default() }).unwrap();
    assert_eq!(again.stats.outer_iterations, 0);
    let admm = admm_solve(&problem, 0.5, &first.triple, &AdmmConfig { tol: 1e-8, ..AdmmConfig::default() }).unwrap();
    assert_eq!(admm.stats.outer_iterations, 0);
}

#[test]
fn iteration_caps_are_flagged() {
    let mut rng = common::rng(35);
    let problem = common::random_problem(&mut rng, 6, 4, 10);
    let zero = Triple::zeros(6, 4);
    let pal = ssnpal_full_solve(&problem, 0.5, &zero, &PalConfig { tol: 1e-12, max_outer: 1, ..PalConfig::default() }).unwrap();
    assert_eq!(pal.status, SolveStatus::IterCap);
    let admm = admm_solve(&problem, 0.5, &zero, &AdmmConfig { tol: 1e-12, max_iter: 3, ..AdmmConfig::default() }).unwrap();
    assert_eq!(admm.status, SolveStatus::IterCap);
    assert_eq!(admm.stats.outer_iterations, 3);
}

/// After one step from zero, `U = kappa sigma (W - Z)` and `Z = Pi(W)`.
#[test]
fn admm_multiplier_identity() {
    let mut rng = common::rng(36);
    let problem = common::random_problem(&mut rng, 5, 3, 9);
    let cfg = AdmmConfig { tol: 1e-14, max_iter: 1, ..AdmmConfig::default() };
    let out = admm_solve(&problem, 0.3, &Triple::zeros(5, 3), &cfg).unwrap();
    let t = &out.triple;
    let z = project(&t.w, 0.3).w;
    assert!(t.z.dist(&z) <= 1e-14 * (1.0 + z.frobenius_norm()));
    for k in 0..15 {
        let want = cfg.kappa * cfg.sigma * (t.w.as_slice()[k] - t.z.as_slice()[k]);
        assert!((t.u.as_slice()[k] - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
    assert!(t.z.l1inf_norm() <= 0.3 * (1.0 + 1e-12));
}

#[test]
fn sieved_path_meets_bound_and_agrees() {
    let mut rng = common::rng(37);
    let problem = common::random_problem(&mut rng, 12, 6, 15);
    let gammas = [0.2, 0.5, 1.0];
    let eps = 1e-6;
    for path in [
        as_ssnpal_solve(&problem, &gammas, eps, &PalConfig { tol: eps, ..PalConfig::default() }).unwrap(),
        as_admm_solve(&problem, &gammas, eps, &AdmmConfig { tol: eps, ..AdmmConfig::default() }).unwrap(),
    ] {
        assert!(path.all_converged(), "{:?}", path.failure);
        assert_eq!(path.records.len(), 3);
        for rec in &path.records {
            let r = proximal_residual(&problem, rec.w(), rec.gamma).unwrap().frobenius_norm();
            assert!(r <= eps, "gamma {}: {r}", rec.gamma);
            for k in rec.active.complement() {
                assert_eq!(rec.w().as_slice()[k], 0.0);
            }
            let full = ssnpal_full_solve(&problem, rec.gamma, &Triple::zeros(12, 6), &PalConfig { tol: 1e-9, ..PalConfig::default() }).unwrap();
            assert!(rel(rec.w(), &full.triple.w) <= 1e-4);
        }
        // A larger ball never fits worse.
        let losses: Vec<f64> = path.records.iter().map(|r| loss(&problem, r.w())).collect();
        assert!(losses.windows(2).all(|l| l[1] <= l[0] * (1.0 + 1e-8)));
    }
}

#[test]
fn huge_eps_takes_one_round() {
    let mut rng = common::rng(38);
    let problem = common::random_problem(&mut rng, 8, 4, 10);
    let options = PathOptions::new(1e12, ReducedSolver::Pal(PalConfig { tol: 1e-6, ..PalConfig::default() }));
    let path = solve_path(&problem, &[0.1, 0.2], &options).unwrap();
    assert!(path.records.iter().all(|r| r.rounds == 1));
    assert_eq!(path.records[0].active, initial_active_set(&problem).unwrap());
}

#[test]
fn violation_set_at_optimum_is_empty() {
    let mut rng = common::rng(39);
    let problem = common::random_problem(&mut rng, 6, 3, 10);
    let out = ssnpal_full_solve(&problem, 0.4, &Triple::zeros(6, 3), &PalConfig { tol: 1e-10, ..PalConfig::default() }).unwrap();
    let w = &out.triple.w;
    let zeros: Vec<usize> = (0..18).filter(|&k| w.as_slice()[k] == 0.0).collect();
    let v = violation_set(&problem, w, 0.4, &zeros, 1e-3).unwrap();
    assert!(v.indices.is_empty(), "{v:?}");
    // Restricting to a single coordinate and checking the rest flags violations.
    let single = ActiveIndexSet::new(6, 3, vec![0]).unwrap();
    let w0 = CoefMatrix::zeros(6, 3);
    let v = violation_set(&problem, &w0, 0.4, &single.complement(), 1e-3).unwrap();
    assert!(!v.indices.is_empty());
}
