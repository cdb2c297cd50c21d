//! ADMM baselines for the full and the reduced problem.
//!
//! Iteration: `(X^T X + sigma I) w = X^T y + sigma z - u`, `z = Proj(w + u / sigma)`,
//! `u += kappa sigma (w - z)`. The W-system is block diagonal by task; small
//! blocks are factored once, large ones are solved by warm-started CG.

use std::time::{Duration, Instant};

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cg::conjugate_gradient;
use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::model::{ActiveIndexSet, CoefMatrix, MultiTaskProblem, ReducedDesign, ResidualReport};
use crate::pal::{ReducedTriple, SolveOutcome, SolveStats, SolveStatus, Triple};
use crate::projection::project_reduced;

/// Largest task block that gets a cached Cholesky factor.
pub const DENSE_BLOCK_MAX: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub sigma: f64,
    /// Dual step length, in `(0, (1 + sqrt 5) / 2)`.
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Upper bound on the relative CG residual of the W-update; the bound in
    /// use is `min(cg_tol, 0.1 R_kkt)`.
    pub cg_tol: f64,
    pub max_cg: usize,
    pub time_limit: Duration,
    pub dense_block_max: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            sigma: 100.0,
            kappa: 1.618,
            tol: 1e-6,
            max_iter: 30000,
            cg_tol: 1e-8,
            max_cg: 1000,
            time_limit: Duration::from_secs(7200),
            dense_block_max: DENSE_BLOCK_MAX,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let golden = 0.5 * (1.0 + 5f64.sqrt());
        if !(self.sigma > 0.0) || !(self.kappa > 0.0 && self.kappa < golden) || !(self.tol > 0.0) || !(self.cg_tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "invalid ADMM parameters: sigma = {}, kappa = {}, tol = {}, cg_tol = {}",
                self.sigma, self.kappa, self.tol, self.cg_tol
            )));
        }
        Ok(())
    }
}

/// Per-task `X_j^T X_j + sigma I`, either factored or applied matrix-free.
struct TaskSystem {
    range: std::ops::Range<usize>,
    gram: Option<DMatrix<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
}

struct WSolver<'a, 'p> {
    design: &'a ReducedDesign<'p>,
    sigma: f64,
    tasks: Vec<TaskSystem>,
    max_cg: usize,
}

impl<'a, 'p> WSolver<'a, 'p> {
    fn new(design: &'a ReducedDesign<'p>, sigma: f64, dense_max: usize, max_cg: usize) -> Self {
        let tasks = design
            .task_blocks()
            .map(|(range, sub)| {
                let tj = range.len();
                if tj == 0 || tj > dense_max {
                    return TaskSystem { range, gram: None, chol: None };
                }
                let x = DMatrix::from_fn(sub.nrows(), tj, |r, c| sub[[r, c]]);
                let gram = x.transpose() * &x;
                let shifted = &gram + DMatrix::identity(tj, tj) * sigma;
                let chol = Cholesky::new(shifted);
                TaskSystem { range, gram: Some(gram), chol }
            })
            .collect();
        Self { design, sigma, tasks, max_cg }
    }

    /// Solves for `w`; `w` holds the warm start on entry. Returns whether every
    /// iterative block met `rel_tol`.
    fn solve(&self, rhs: &[f64], w: &mut [f64], rel_tol: f64) -> bool {
        let mut all_ok = true;
        let blocks: Vec<_> = self.design.task_blocks().collect();
        for (task, (_, sub)) in self.tasks.iter().zip(blocks) {
            let range = task.range.clone();
            if range.is_empty() {
                continue;
            }
            let b = &rhs[range.clone()];
            if let Some(chol) = &task.chol {
                let x = chol.solve(&DVector::from_column_slice(b));
                w[range].copy_from_slice(x.as_slice());
                continue;
            }
            let sigma = self.sigma;
            let apply = |v: &[f64]| -> Vec<f64> {
                let xv = sub.dot(&ndarray::ArrayView1::from(v));
                let mut out = sub.t().dot(&xv).to_vec();
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += sigma * vi;
                }
                out
            };
            let tol = rel_tol * norm(b).max(f64::MIN_POSITIVE);
            let out = conjugate_gradient(apply, b, Some(&w[range.clone()]), tol, self.max_cg, None);
            all_ok &= out.converged;
            w[range].copy_from_slice(&out.x);
        }
        all_ok
    }

    /// Reduced loss gradient `X^T X w - X^T y`, using cached Gram blocks where present.
    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        if self.tasks.iter().all(|t| t.gram.is_some() || t.range.is_empty()) {
            let xty = self.design.xty();
            let mut g = vec![0.0; w.len()];
            for task in &self.tasks {
                if let Some(gram) = &task.gram {
                    let r = task.range.clone();
                    let gw = gram * DVector::from_column_slice(&w[r.clone()]);
                    for (k, v) in r.zip(gw.iter()) {
                        g[k] = v - xty[k];
                    }
                }
            }
            g
        } else {
            self.design.gradient(w)
        }
    }
}

fn residuals(solver: &WSolver<'_, '_>, gamma: f64, w: &[f64], z: &[f64], u: &[f64]) -> Result<ResidualReport> {
    let res1 = dist(w, z) / (1.0 + norm(w) + norm(z));
    let zu: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + b).collect();
    let pz = project_reduced(&zu, solver.design.active(), gamma)?;
    let res2 = dist(z, &pz) / (1.0 + norm(z) + norm(u));
    let g = solver.gradient(w);
    let num = g.iter().zip(u).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    Ok(ResidualReport::new(res1, res2, num / (1.0 + norm(u) + norm(&g))))
}

/// One W-update on the full problem: `(X*X + sigma I) W = X*(y) + sigma Z - U`,
/// per task by CG to relative residual `cg_tol`.
///
/// The flag reports whether every task system met the tolerance.
pub fn admm_w_update(problem: &MultiTaskProblem, z: &CoefMatrix, u: &CoefMatrix, sigma: f64, cg_tol: f64) -> Result<(CoefMatrix, bool)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let design = ReducedDesign::full(problem);
    if z.shape() != (problem.d(), problem.n()) || u.shape() != z.shape() {
        return Err(Error::DimensionMismatch("Z and U must be d x n".into()));
    }
    let solver = WSolver::new(&design, sigma, 0, 10 * problem.d().max(10));
    let rhs: Vec<f64> = design.xty().iter().zip(z.as_slice()).zip(u.as_slice()).map(|((b, zi), ui)| b + sigma * zi - ui).collect();
    let mut w = vec![0.0; rhs.len()];
    let ok = solver.solve(&rhs, &mut w, cg_tol);
    Ok((CoefMatrix::from_column_major(problem.d(), problem.n(), w)?, ok))
}

/// ADMM on the problem restricted to `design.active()`.
pub fn admm_solve_on(design: &ReducedDesign<'_>, gamma: f64, init: ReducedTriple, config: &AdmmConfig) -> Result<SolveOutcome> {
    config.validate()?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let t = design.t();
    if t == 0 {
        return Err(Error::InvalidInput("active set is empty".into()));
    }
    if init.w.len() != t || init.z.len() != t || init.u.len() != t {
        return Err(Error::DimensionMismatch(format!("initial triple must have length {t}")));
    }
    let started = Instant::now();
    let sigma = config.sigma;
    let solver = WSolver::new(design, sigma, config.dense_block_max, config.max_cg);
    let ReducedTriple { mut w, mut z, mut u } = init;
    let mut res = residuals(&solver, gamma, &w, &z, &u)?;
    let mut stats = SolveStats::default();
    let xty = design.xty();
    let mut rhs = vec![0.0; t];

    let status = loop {
        if res.r_kkt <= config.tol {
            break SolveStatus::Converged;
        }
        if stats.outer_iterations >= config.max_iter {
            break SolveStatus::IterCap;
        }
        if started.elapsed() >= config.time_limit {
            break SolveStatus::TimeCap;
        }
        for k in 0..t {
            rhs[k] = xty[k] + sigma * z[k] - u[k];
        }
        let cg_tol = config.cg_tol.min(0.1 * res.r_kkt);
        if !solver.solve(&rhs, &mut w, cg_tol) {
            stats.cg_capped += 1;
        }
        let shifted: Vec<f64> = w.iter().zip(&u).map(|(wi, ui)| wi + ui / sigma).collect();
        z = project_reduced(&shifted, design.active(), gamma)?;
        for k in 0..t {
            u[k] += config.kappa * sigma * (w[k] - z[k]);
        }
        res = residuals(&solver, gamma, &w, &z, &u)?;
        stats.outer_iterations += 1;
        if stats.outer_iterations % 1000 == 0 {
            debug!("admm k={} r_kkt={:.3e}", stats.outer_iterations, res.r_kkt);
        }
    };
    stats.elapsed = started.elapsed();
    let triple = ReducedTriple { w, z, u }.scatter(design.active());
    Ok(SolveOutcome { triple, residuals: res, status, stats, sigma, failure: None })
}

/// Full-space ADMM from `init`.
pub fn admm_solve(problem: &MultiTaskProblem, gamma: f64, init: &Triple, config: &AdmmConfig) -> Result<SolveOutcome> {
    let active = ActiveIndexSet::full(problem.d(), problem.n());
    let design = ReducedDesign::new(problem, active.clone())?;
    admm_solve_on(&design, gamma, init.gather(&active), config)
}
