//! Independent optimality check for a claimed projection.
//!
//! For the point `q = Vec(Q)` the ball is the polyhedron `{w : B w <= c}` with
//! rows `-F` (sign constraints), `D = F - 1 (x) E` (no entry exceeds its row's
//! argmax) and `b^T` (the budget). A point `w` is the projection iff it is
//! feasible and `q - w = B_A^T mu` for some `mu >= 0` supported on the active
//! rows `A`. The multiplier is recovered by nonnegative least squares.

use nalgebra::{DMatrix, DVector};

use super::{approx_eq, extract_pattern, ProjectionResult};
use crate::linalg::norm;
use crate::model::CoefMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub passed: bool,
    /// `min_{mu >= 0} ||B_A^T mu - (q - w)||`
    pub stationarity: f64,
    /// `max_r ((B w)_r - c_r)^+`
    pub infeasibility: f64,
    pub active_rows: usize,
    pub nnls_converged: bool,
    /// The bound both quantities are compared against, `tol * (1 + ||q||)`.
    pub threshold: f64,
}

/// One sparse row of `B` with its right-hand side.
struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

fn constraint_rows(q: &CoefMatrix, gamma: f64) -> Vec<Row> {
    let pattern = extract_pattern(q, gamma);
    let d = q.d();
    let nd = q.as_slice().len();
    let mut rows = Vec::with_capacity(2 * nd + 1);
    for k in 0..nd {
        let s = pattern.sign_diag[k];
        rows.push(Row { coeffs: if s != 0.0 { vec![(k, -s)] } else { vec![] }, rhs: 0.0 });
    }
    for k in 0..nd {
        let i = k % d;
        let lam = pattern.lambda_lin[i];
        let t = pattern.b[lam];
        let s = pattern.sign_diag[k];
        let coeffs = if k == lam {
            // s_k - t = 0 identically
            vec![]
        } else {
            [(k, s), (lam, -t)].into_iter().filter(|&(_, c)| c != 0.0).collect()
        };
        rows.push(Row { coeffs, rhs: 0.0 });
    }
    let budget = pattern.lambda_lin.iter().map(|&k| (k, pattern.b[k])).filter(|&(_, c)| c != 0.0).collect();
    rows.push(Row { coeffs: budget, rhs: gamma });
    rows
}

/// Checks the KKT system of the projection problem at `result.w`.
pub fn kkt_certificate(q: &CoefMatrix, result: &ProjectionResult, gamma: f64, tol: f64) -> CertificateReport {
    let w = result.w.as_slice();
    let qv = q.as_slice();
    let nd = qv.len();
    let threshold = tol * (1.0 + norm(qv));
    let rows = constraint_rows(q, gamma);

    let mut infeasibility = 0.0_f64;
    let mut active = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let val: f64 = row.coeffs.iter().map(|&(k, c)| c * w[k]).sum();
        infeasibility = infeasibility.max(val - row.rhs);
        if !row.coeffs.is_empty() && approx_eq(val, row.rhs) {
            active.push(r);
        }
    }

    let target = DVector::from_iterator(nd, qv.iter().zip(w).map(|(a, b)| a - b));
    let (stationarity, nnls_converged) = if active.is_empty() {
        (target.norm(), true)
    } else {
        let mut a = DMatrix::zeros(nd, active.len());
        for (col, &r) in active.iter().enumerate() {
            for &(k, c) in &rows[r].coeffs {
                a[(k, col)] = c;
            }
        }
        let (mu, converged) = nnls(&a, &target, 10 * active.len());
        ((&a * mu - &target).norm(), converged)
    };

    CertificateReport {
        passed: nnls_converged && stationarity <= threshold && infeasibility <= threshold,
        stationarity,
        infeasibility,
        active_rows: active.len(),
        nnls_converged,
        threshold,
    }
}

/// Lawson-Hanson active-set NNLS: `min ||A x - b||` subject to `x >= 0`.
///
/// Returns the iterate and whether it terminated within `max_iter` inner
/// least-squares solves.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> (DVector<f64>, bool) {
    let p = a.ncols();
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let scale = a.norm() * b.norm();
    let tol = 1e-13 * scale.max(1e-300);
    let mut iters = 0;

    loop {
        let grad = a.transpose() * (b - a * &x);
        let cand = (0..p).filter(|&j| !passive[j]).max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let j = match cand {
            Some(j) if grad[j] > tol => j,
            _ => return (x, true),
        };
        passive[j] = true;

        loop {
            iters += 1;
            if iters > max_iter.max(1) {
                return (x, false);
            }
            let idx: Vec<usize> = (0..p).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(&idx);
            let Some(sol) = least_squares(&sub, b) else {
                return (x, false);
            };
            let mut s = DVector::zeros(p);
            for (pos, &i) in idx.iter().enumerate() {
                s[i] = sol[pos];
            }
            if idx.iter().all(|&i| s[i] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &i in &idx {
                if s[i] <= 0.0 {
                    let denom = x[i] - s[i];
                    let ratio = if denom > 0.0 { x[i] / denom } else { 0.0 };
                    alpha = alpha.min(ratio);
                }
            }
            x += (s - &x) * alpha;
            for &i in &idx {
                if x[i] <= 1e-15 * scale.max(1.0) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&v| v) {
                break;
            }
        }
    }
}

/// `argmin ||A x - b||` through the normal equations. The SVD is only a
/// fallback: on degenerate 0/±1 matrices nalgebra's SVD can lose accuracy
/// even when `A` is well conditioned.
fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let atb = a.transpose() * b;
    if let Some(chol) = (a.transpose() * a).cholesky() {
        return Some(chol.solve(&atb));
    }
    a.clone().svd(true, true).solve(b, 1e-12).ok()
}
