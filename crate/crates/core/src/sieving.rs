//! Adaptive sieving over a grid of radii.
//!
//! Each radius is solved on a small active set of coefficients; the full-space
//! proximal residual then decides whether the reduced solution is accepted or
//! the set grows by the coordinates that violate the optimality conditions.

use std::time::{Duration, Instant};

use log::{debug, info, warn};

use crate::admm::{admm_solve_on, AdmmConfig};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::{
    adjoint_design, apply_design, kkt_residuals, proximal_residual, spectral_norm_estimate, ActiveIndexSet, CoefMatrix,
    MultiTaskProblem, ReducedDesign, ResidualReport,
};
use crate::pal::{pal_solve_on, ssnpal_full_solve, PalConfig, SolveOutcome, SolveStatus, Triple};
use crate::projection::{approx_eq, project};

/// `|<X_k, y>| / (||X_k|| ||y||)` for every coefficient, by linear index.
pub fn correlation_scores(problem: &MultiTaskProblem) -> Vec<f64> {
    let d = problem.d();
    let y_norm = norm(problem.y());
    let mut scores = vec![0.0; d * problem.n()];
    for (j, block) in problem.blocks().iter().enumerate() {
        let yj = problem.y_segment(j);
        for i in 0..d {
            let col = block.column(i);
            let cn = col.dot(&col).sqrt();
            if cn > 0.0 && y_norm > 0.0 {
                let ip: f64 = col.iter().zip(yj).map(|(a, b)| a * b).sum();
                scores[j * d + i] = ip.abs() / (cn * y_norm);
            }
        }
    }
    scores
}

/// The `ceil(sqrt(n))` coefficients with the largest correlation scores; ties
/// go to the smaller linear index.
pub fn initial_active_set(problem: &MultiTaskProblem) -> Result<ActiveIndexSet> {
    if problem.y().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("response vector is zero".into()));
    }
    let scores = correlation_scores(problem);
    let take = ((problem.n() as f64).sqrt().ceil() as usize).min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(take);
    ActiveIndexSet::new(problem.d(), problem.n(), order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationSet {
    pub indices: Vec<usize>,
    /// Coordinates above the threshold that were not added because their row
    /// of `W` is zero while `W` sits on the boundary.
    pub zero_row_skips: usize,
}

/// Inactive coordinates whose gradient falls outside the normal cone of the
/// ball at `W`, enlarged by `eps / sqrt(2 |complement|)` in the sup norm.
pub fn violation_set(problem: &MultiTaskProblem, w: &CoefMatrix, gamma: f64, complement: &[usize], eps: f64) -> Result<ViolationSet> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let mut out = ViolationSet { indices: Vec::new(), zero_row_skips: 0 };
    if complement.is_empty() {
        return Ok(out);
    }
    let d = problem.d();
    let mut r = apply_design(problem, w)?;
    for (ri, yi) in r.iter_mut().zip(problem.y()) {
        *ri = yi - *ri;
    }
    let g = adjoint_design(problem, &r)?;
    let threshold = eps / (2.0 * complement.len() as f64).sqrt();
    let norm_w = w.l1inf_norm();
    let boundary = norm_w > gamma || approx_eq(norm_w, gamma);
    let zero_row: Vec<bool> = (0..d).map(|i| w.row(i).iter().all(|&v| v == 0.0)).collect();
    for &k in complement {
        if g.as_slice()[k].abs() <= threshold {
            continue;
        }
        if boundary && zero_row[k % d] {
            out.zero_row_skips += 1;
        } else {
            out.indices.push(k);
        }
    }
    Ok(out)
}

/// Solver used for the reduced problems.
#[derive(Debug, Clone, PartialEq)]
pub enum ReducedSolver {
    Pal(PalConfig),
    Admm(AdmmConfig),
}

impl ReducedSolver {
    pub fn tol(&self) -> f64 {
        match self {
            Self::Pal(c) => c.tol,
            Self::Admm(c) => c.tol,
        }
    }

    fn time_limit(&self) -> Duration {
        match self {
            Self::Pal(c) => c.time_limit,
            Self::Admm(c) => c.time_limit,
        }
    }

    fn run(&self, design: &ReducedDesign<'_>, gamma: f64, init: &Triple, tol: f64, time_left: Duration, sigma: Option<f64>) -> Result<SolveOutcome> {
        let init = init.gather(design.active());
        match self {
            Self::Pal(c) => {
                let cfg = PalConfig { tol, time_limit: time_left, sigma0: sigma.unwrap_or(c.sigma0), ..c.clone() };
                pal_solve_on(design, gamma, init, &cfg)
            }
            Self::Admm(c) => {
                let cfg = AdmmConfig { tol, time_limit: time_left, ..c.clone() };
                admm_solve_on(design, gamma, init, &cfg)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathOptions {
    /// Bound on `||R_gamma(W)||_F` at every accepted path entry.
    pub eps: f64,
    pub solver: ReducedSolver,
    /// Solve the first radius in full space and seed the active set from its support.
    pub exact_initial: bool,
    /// How often the reduced tolerance may be tightened per radius.
    pub max_tightenings: usize,
    /// Smallest reduced tolerance ever requested.
    pub min_tol: f64,
}

impl PathOptions {
    pub fn new(eps: f64, solver: ReducedSolver) -> Self {
        Self { eps, solver, exact_initial: false, max_tightenings: 12, min_tol: 1e-14 }
    }
}

#[derive(Debug, Clone)]
pub struct PathRecord {
    pub gamma: f64,
    pub triple: Triple,
    pub active: ActiveIndexSet,
    /// `||R_gamma(W)||_F` of the accepted solution.
    pub residual_norm: f64,
    /// Residuals of the last reduced solve.
    pub reduced_residuals: ResidualReport,
    pub rounds: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub elapsed: Duration,
    pub status: SolveStatus,
    pub zero_row_skips: usize,
    /// Coordinates added by the residual fallback after the literal test came up empty.
    pub fallback_additions: usize,
    pub tightenings: usize,
    /// Reduced tolerance in force when the entry was accepted.
    pub final_tol: f64,
}

impl PathRecord {
    pub fn w(&self) -> &CoefMatrix {
        &self.triple.w
    }
}

#[derive(Debug, Clone)]
pub struct PathFailure {
    pub gamma: f64,
    pub round: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub records: Vec<PathRecord>,
    pub failure: Option<PathFailure>,
    pub elapsed: Duration,
}

impl PathResult {
    pub fn all_converged(&self) -> bool {
        self.failure.is_none() && self.records.iter().all(|r| r.status.is_converged())
    }
}

fn check_grid(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::InvalidInput("radius grid is empty".into()));
    }
    if gammas[0] <= 0.0 || gammas.windows(2).any(|w| w[1] <= w[0]) || gammas.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidInput(format!("radius grid must be positive and strictly increasing: {gammas:?}")));
    }
    Ok(())
}

/// Solution path by adaptive sieving.
///
/// Each radius starts from the previous radius' active set and solution.
/// Failures of the reduced solver end the path early; the records gathered so
/// far are returned together with the failure.
pub fn solve_path(problem: &MultiTaskProblem, gammas: &[f64], options: &PathOptions) -> Result<PathResult> {
    check_grid(gammas)?;
    if !(options.eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {}", options.eps)));
    }
    let started = Instant::now();
    let budget = options.solver.time_limit();
    let (d, n) = (problem.d(), problem.n());
    let eps = options.eps;
    let max_rounds = d * n + 1;

    let mut active = initial_active_set(problem)?;
    let mut triple = Triple::zeros(d, n);
    let mut records = Vec::with_capacity(gammas.len());
    let mut tol = options.solver.tol();
    let mut sigma = None;
    let mut grid = gammas;

    if options.exact_initial {
        let g0 = gammas[0];
        let (w0, stats) = initial_gamma_solve(problem, g0, eps, options)?;
        let support: Vec<usize> = (0..d * n).filter(|&k| w0.as_slice()[k] != 0.0).collect();
        if !support.is_empty() {
            active = ActiveIndexSet::new(d, n, support)?;
        }
        let residual_norm = proximal_residual(problem, &w0, g0)?.frobenius_norm();
        triple = Triple { w: w0.clone(), z: w0.clone(), u: stats.triple.u.clone() };
        let reduced_residuals = kkt_residuals(problem, &triple.w, &triple.z, &triple.u, g0, Some(&active))?;
        records.push(PathRecord {
            gamma: g0,
            triple: triple.clone(),
            active: active.clone(),
            residual_norm,
            reduced_residuals,
            rounds: 0,
            outer_iterations: stats.stats.outer_iterations,
            inner_iterations: stats.stats.inner_iterations,
            elapsed: started.elapsed(),
            status: if residual_norm <= eps { SolveStatus::Converged } else { stats.status },
            zero_row_skips: 0,
            fallback_additions: 0,
            tightenings: 0,
            final_tol: tol,
        });
        grid = &gammas[1..];
    }

    for &gamma in grid {
        let gamma_start = Instant::now();
        let mut rec = PathRecord {
            gamma,
            triple: triple.clone(),
            active: active.clone(),
            residual_norm: f64::INFINITY,
            reduced_residuals: ResidualReport::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            rounds: 0,
            outer_iterations: 0,
            inner_iterations: 0,
            elapsed: Duration::ZERO,
            status: SolveStatus::IterCap,
            zero_row_skips: 0,
            fallback_additions: 0,
            tightenings: 0,
            final_tol: tol,
        };
        let mut failure = None;
        loop {
            let Some(time_left) = budget.checked_sub(started.elapsed()) else {
                rec.status = SolveStatus::TimeCap;
                break;
            };
            if rec.rounds >= max_rounds {
                break;
            }
            let design = ReducedDesign::new(problem, active.clone())?;
            let out = match options.solver.run(&design, gamma, &triple, tol, time_left, sigma) {
                Ok(o) => o,
                Err(e) => {
                    failure = Some(PathFailure { gamma, round: rec.rounds + 1, message: e.to_string() });
                    rec.status = SolveStatus::Failed;
                    break;
                }
            };
            rec.rounds += 1;
            rec.outer_iterations += out.stats.outer_iterations;
            rec.inner_iterations += out.stats.inner_iterations;
            rec.reduced_residuals = out.residuals;
            if matches!(options.solver, ReducedSolver::Pal(_)) {
                sigma = Some(out.sigma);
            }
            triple = out.triple;
            if matches!(out.status, SolveStatus::Failed | SolveStatus::TimeCap) {
                rec.status = out.status;
                if let Some(msg) = out.failure {
                    failure = Some(PathFailure { gamma, round: rec.rounds, message: msg });
                }
                break;
            }

            let resid = proximal_residual(problem, &triple.w, gamma)?;
            rec.residual_norm = resid.frobenius_norm();
            debug!(
                "gamma {gamma}: round {} |I| = {} r_kkt = {:.2e} ||R|| = {:.3e} (tol {:.1e})",
                rec.rounds,
                active.len(),
                out.residuals.r_kkt,
                rec.residual_norm,
                tol
            );
            if rec.residual_norm <= eps {
                rec.status = SolveStatus::Converged;
                break;
            }

            let complement = active.complement();
            let viol = violation_set(problem, &triple.w, gamma, &complement, eps)?;
            rec.zero_row_skips += viol.zero_row_skips;
            let mut add = viol.indices;
            if add.is_empty() && !complement.is_empty() {
                let cut = eps / (2.0 * complement.len() as f64).sqrt();
                add = complement.iter().copied().filter(|&k| resid.as_slice()[k].abs() > cut).collect();
                rec.fallback_additions += add.len();
            }
            if add.is_empty() {
                // nothing left to add: the reduced solve itself is not accurate enough
                if rec.tightenings >= options.max_tightenings || tol <= options.min_tol {
                    warn!("gamma {gamma}: residual {:.3e} above eps {eps:.1e} with no coordinate left to add", rec.residual_norm);
                    break;
                }
                let factor = (0.5 * eps / rec.residual_norm).clamp(1e-3, 0.1);
                tol = (tol * factor).max(options.min_tol);
                rec.tightenings += 1;
            }
            if !add.is_empty() {
                active = active.union(&add)?;
            }
        }
        rec.triple = triple.clone();
        rec.active = active.clone();
        rec.elapsed = gamma_start.elapsed();
        rec.final_tol = tol;
        info!(
            "gamma {gamma}: {} after {} round(s), |I| = {}, ||R|| = {:.3e}",
            rec.status,
            rec.rounds,
            active.len(),
            rec.residual_norm
        );
        records.push(rec);
        if let Some(f) = failure {
            return Ok(PathResult { records, failure: Some(f), elapsed: started.elapsed() });
        }
    }
    Ok(PathResult { records, failure: None, elapsed: started.elapsed() })
}

/// Full-space solve of the first radius, followed by one projected-gradient
/// step: `W = Proj(W_hat - X*(X W_hat - y))`.
///
/// `W_hat` is refined until `||R(W_hat)|| <= eps / (sqrt 2 (1 + L))`, with `L`
/// the largest eigenvalue of `X*X`.
pub fn initial_gamma_solve(problem: &MultiTaskProblem, gamma: f64, eps: f64, options: &PathOptions) -> Result<(CoefMatrix, SolveOutcome)> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let lip = spectral_norm_estimate(problem).value;
    let target = eps / (std::f64::consts::SQRT_2 * (1.0 + lip));
    let mut cfg = match &options.solver {
        ReducedSolver::Pal(c) => c.clone(),
        ReducedSolver::Admm(_) => PalConfig { tol: options.solver.tol(), ..PalConfig::default() },
    };
    let mut init = Triple::zeros(problem.d(), problem.n());
    loop {
        let out = ssnpal_full_solve(problem, gamma, &init, &cfg)?;
        let r = proximal_residual(problem, &out.triple.w, gamma)?.frobenius_norm();
        if r <= target || cfg.tol <= options.min_tol || out.status != SolveStatus::Converged {
            let w_hat = &out.triple.w;
            let grad = crate::model::loss_gradient(problem, w_hat)?;
            let w = project(&w_hat.sub(&grad), gamma).w;
            return Ok((w, out));
        }
        cfg.tol = (cfg.tol * 0.1).max(options.min_tol);
        init = out.triple;
    }
}

/// Sieved ADMM over a radius grid.
pub fn as_admm_solve(problem: &MultiTaskProblem, gammas: &[f64], eps: f64, config: &AdmmConfig) -> Result<PathResult> {
    solve_path(problem, gammas, &PathOptions::new(eps, ReducedSolver::Admm(config.clone())))
}

/// Sieved proximal augmented Lagrangian over a radius grid.
pub fn as_ssnpal_solve(problem: &MultiTaskProblem, gammas: &[f64], eps: f64, config: &PalConfig) -> Result<PathResult> {
    solve_path(problem, gammas, &PathOptions::new(eps, ReducedSolver::Pal(config.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn initial_set_size() {
        let blocks = (0..4).map(|j| array![[1.0 + j as f64, 0.5], [0.2, -1.0], [0.3, 0.3]]).collect();
        let prob = MultiTaskProblem::new(blocks, (0..12).map(|v| v as f64 - 3.0).collect()).unwrap();
        assert_eq!(initial_active_set(&prob).unwrap().len(), 2);
    }

    #[test]
    fn initial_set_prefers_correlated_column() {
        let prob = MultiTaskProblem::new(vec![array![[1.0, 0.0], [0.0, 1.0]]], vec![0.0, 2.0]).unwrap();
        assert_eq!(initial_active_set(&prob).unwrap().linear(), &[1]);
    }

    #[test]
    fn zero_response_rejected() {
        let prob = MultiTaskProblem::new(vec![array![[1.0]]], vec![0.0]).unwrap();
        assert!(initial_active_set(&prob).is_err());
    }

    #[test]
    fn violation_interior_threshold() {
        // g = X^T y at W = 0; eps' = eps / sqrt(2 * 2) = 0.1
        let prob = MultiTaskProblem::new(vec![array![[1.0, 0.0], [0.0, 1.0]]], vec![0.5, 0.01]).unwrap();
        let w = CoefMatrix::zeros(2, 1);
        let v = violation_set(&prob, &w, 1.0, &[0, 1], 0.2).unwrap();
        assert_eq!(v.indices, vec![0]);
    }

    #[test]
    fn violation_skips_zero_rows_on_boundary() {
        let prob = MultiTaskProblem::new(vec![array![[1.0, 0.0], [0.0, 1.0]]], vec![5.0, 5.0]).unwrap();
        let w = CoefMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let v = violation_set(&prob, &w, 1.0, &[1], 1e-3).unwrap();
        assert!(v.indices.is_empty());
        assert_eq!(v.zero_row_skips, 1);
        let v = violation_set(&prob, &w, 2.0, &[1], 1e-3).unwrap();
        assert_eq!(v.indices, vec![1]);
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[0.1, 0.1]).is_err());
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[-1.0]).is_err());
        assert!(check_grid(&[0.1, 0.2]).is_ok());
    }
}
