//! Proximal augmented Lagrangian method on a reduced problem.
//!
//! Splitting `W = Z` with `Z` in the ball, each outer iteration minimizes the
//! proximal augmented Lagrangian in `W` by semismooth Newton, projects to get
//! `Z`, and takes a multiplier step on `U`. The full-space method is the same
//! loop with every coefficient active.

use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::model::{ActiveIndexSet, CoefMatrix, MultiTaskProblem, ReducedDesign, ResidualReport};
use crate::projection::project_reduced;
use crate::ssn::{ssn_solve, InnerProblem, SsnConfig};

pub const SIGMA_MIN: f64 = 1e-5;
pub const SIGMA_MAX: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct PalConfig {
    /// Stop once `R_kkt <= tol`.
    pub tol: f64,
    pub sigma0: f64,
    pub max_outer: usize,
    pub time_limit: Duration,
    pub ssn: SsnConfig,
    /// How often an inner solve may be resumed when (A1)/(A2) fail.
    pub max_resume: usize,
}

impl Default for PalConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            sigma0: 500.0,
            max_outer: 200,
            time_limit: Duration::from_secs(7200),
            ssn: SsnConfig::default(),
            max_resume: 5,
        }
    }
}

impl PalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.sigma0 > 0.0) {
            return Err(Error::InvalidInput(format!("tol = {} and sigma0 = {} must be positive", self.tol, self.sigma0)));
        }
        self.ssn.validate()
    }
}

/// Termination reason of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Converged,
    IterCap,
    TimeCap,
    /// The inner solver broke down; the returned iterate is the last good one.
    Failed,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::IterCap => "iter-cap",
            Self::TimeCap => "time-cap",
            Self::Failed => "failed",
        }
    }

    pub fn is_converged(self) -> bool {
        self == Self::Converged
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Primal, auxiliary and multiplier matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub w: CoefMatrix,
    pub z: CoefMatrix,
    pub u: CoefMatrix,
}

impl Triple {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self { w: CoefMatrix::zeros(d, n), z: CoefMatrix::zeros(d, n), u: CoefMatrix::zeros(d, n) }
    }

    /// Restriction to `active`; everything else is dropped.
    pub fn gather(&self, active: &ActiveIndexSet) -> ReducedTriple {
        ReducedTriple { w: self.w.gather(active), z: self.z.gather(active), u: self.u.gather(active) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTriple {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

impl ReducedTriple {
    pub fn scatter(&self, active: &ActiveIndexSet) -> Triple {
        Triple {
            w: CoefMatrix::scatter(active, &self.w),
            z: CoefMatrix::scatter(active, &self.z),
            u: CoefMatrix::scatter(active, &self.u),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub cg_iterations: usize,
    pub resumes: usize,
    pub stalled_inner: usize,
    /// Linear solves that hit their iteration cap.
    pub cg_capped: usize,
    pub sigma_history: Vec<f64>,
    /// Residuals after each outer iteration.
    pub residual_history: Vec<ResidualReport>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub triple: Triple,
    pub residuals: ResidualReport,
    pub status: SolveStatus,
    pub stats: SolveStats,
    pub sigma: f64,
    pub failure: Option<String>,
}

/// `eps_k = 0.5 * 0.9^k * min(1, 1e3 tol)`
pub fn eps_k(k: usize, tol: f64) -> f64 {
    0.5 * 0.9f64.powi(k as i32) * (1e3 * tol).min(1.0)
}

/// `theta_k = 0.5 * 0.9^k`
pub fn theta_k(k: usize) -> f64 {
    0.5 * 0.9f64.powi(k as i32)
}

/// Outcome of the inexactness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InexactnessCheck {
    pub a1: bool,
    pub a2: bool,
    pub a1_bound: f64,
    pub a2_bound: f64,
}

impl InexactnessCheck {
    pub fn satisfied(&self) -> bool {
        self.a1 && self.a2
    }
}

/// (A1) `g <= eps_k / sigma` and (A2) `g <= (theta_k / sigma) ||(dw, dz)|| + ||du||`.
pub fn check_a1_a2(grad_norm: f64, step_wz: f64, step_u: f64, sigma: f64, eps: f64, theta: f64) -> InexactnessCheck {
    let a1_bound = eps / sigma;
    let a2_bound = theta / sigma * step_wz + step_u;
    InexactnessCheck { a1: grad_norm <= a1_bound, a2: grad_norm <= a2_bound, a1_bound, a2_bound }
}

/// Penalty schedule driven by the primal (`Res1`) and dual (`Res3`) residuals.
pub fn sigma_update(sigma: f64, current: &ResidualReport, previous: Option<&ResidualReport>, tol: f64) -> f64 {
    let next = if current.res3 < current.res1 {
        (1.5 * sigma).min(SIGMA_MAX)
    } else {
        match previous {
            Some(prev) if current.res3 > 0.9 * prev.res3 => {
                let near = current.r_kkt < 5.0 * tol;
                let varsigma = if near && current.res1 < 0.9 * prev.res1 {
                    0.5
                } else if near && current.res1 >= 0.9 * prev.res1 && current.res1 < 1.1 * prev.res1 {
                    0.8
                } else {
                    0.9
                };
                (varsigma * sigma).max(SIGMA_MIN)
            }
            _ => (1.05 * sigma).min(1e6),
        }
    };
    next.clamp(SIGMA_MIN, SIGMA_MAX)
}

/// Residuals of a reduced triple; `Res3` uses the reduced gradient.
///
/// With every coefficient active this is the full-space residual.
pub fn reduced_residuals(design: &ReducedDesign<'_>, gamma: f64, w: &[f64], z: &[f64], u: &[f64]) -> Result<ResidualReport> {
    let res1 = dist(w, z) / (1.0 + norm(w) + norm(z));
    let zu: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + b).collect();
    let pz = project_reduced(&zu, design.active(), gamma)?;
    let res2 = dist(z, &pz) / (1.0 + norm(z) + norm(u));
    let g = design.gradient(w);
    let num = g.iter().zip(u).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    let res3 = num / (1.0 + norm(u) + norm(&g));
    Ok(ResidualReport::new(res1, res2, res3))
}

/// Working state of the outer loop.
#[derive(Debug, Clone)]
pub struct PalState {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub sigma: f64,
    pub k: usize,
    pub residuals: ResidualReport,
    /// (A2) bound from the previous iteration, used to seed the inner tolerance.
    prev_a2: f64,
}

impl PalState {
    pub fn new(design: &ReducedDesign<'_>, gamma: f64, init: ReducedTriple, sigma: f64) -> Result<Self> {
        let t = design.t();
        if init.w.len() != t || init.z.len() != t || init.u.len() != t {
            return Err(Error::DimensionMismatch(format!("initial triple must have length {t}")));
        }
        let residuals = reduced_residuals(design, gamma, &init.w, &init.z, &init.u)?;
        Ok(Self { w: init.w, z: init.z, u: init.u, sigma, k: 0, residuals, prev_a2: f64::INFINITY })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub newton: usize,
    pub cg: usize,
    pub resumes: usize,
    pub stalled: bool,
    pub cg_capped: usize,
}

/// One outer iteration. `state.sigma` is left for the caller to update.
pub fn pal_step(state: &mut PalState, design: &ReducedDesign<'_>, gamma: f64, config: &PalConfig) -> Result<StepStats> {
    let sigma = state.sigma;
    let eps = eps_k(state.k, config.tol);
    let theta = theta_k(state.k);
    let inner = InnerProblem::new(design, gamma, sigma, state.u.clone(), state.w.clone())?;

    let floor = 1e-13;
    let mut grad_tol = (eps / sigma).min(state.prev_a2).max(floor);
    let mut start = state.w.clone();
    let mut stats = StepStats::default();
    loop {
        let (eval, ssn) = ssn_solve(&inner, &start, &config.ssn, grad_tol)?;
        stats.newton += ssn.iterations;
        stats.cg += ssn.cg_iterations;
        stats.stalled |= ssn.stalled;
        stats.cg_capped += ssn.cg_capped;
        log::trace!(
            "ssn k={} newton={} cg={} grad {:.3e} -> {:.3e} (target {:.3e}) stalled={} noise_steps={}",
            state.k,
            ssn.iterations,
            ssn.cg_iterations,
            ssn.grad_norms[0],
            eval.grad_norm,
            grad_tol,
            ssn.stalled,
            ssn.noise_limited_steps
        );

        let w_new = eval.w.clone();
        let z_new = eval.proj_reduced.clone();
        let u_new: Vec<f64> = state.u.iter().zip(&w_new).zip(&z_new).map(|((u, w), z)| u + sigma * (w - z)).collect();

        let dw = dist(&w_new, &state.w);
        let dz = dist(&z_new, &state.z);
        let du = dist(&u_new, &state.u);
        let check = check_a1_a2(eval.grad_norm, dw.hypot(dz), du, sigma, eps, theta);
        let min_bound = check.a1_bound.min(check.a2_bound);
        let can_resume = stats.resumes < config.max_resume && !ssn.stalled && 0.5 * min_bound > floor;
        if check.satisfied() || !can_resume {
            if !check.satisfied() {
                debug!("inexactness test not met at k = {}: grad {:e}, bounds {:e} / {:e}", state.k, eval.grad_norm, check.a1_bound, check.a2_bound);
            }
            state.prev_a2 = check.a2_bound;
            state.w = w_new;
            state.z = z_new;
            state.u = u_new;
            state.k += 1;
            state.residuals = reduced_residuals(design, gamma, &state.w, &state.z, &state.u)?;
            return Ok(stats);
        }
        stats.resumes += 1;
        grad_tol = 0.5 * min_bound;
        start = w_new;
    }
}

/// Runs the outer loop on the problem restricted to `design.active()`.
///
/// `init` supplies the starting triple on the active coordinates.
pub fn pal_solve_on(design: &ReducedDesign<'_>, gamma: f64, init: ReducedTriple, config: &PalConfig) -> Result<SolveOutcome> {
    config.validate()?;
    if design.t() == 0 {
        return Err(Error::InvalidInput("active set is empty".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let started = Instant::now();
    let mut state = PalState::new(design, gamma, init, config.sigma0.clamp(SIGMA_MIN, SIGMA_MAX))?;
    let mut stats = SolveStats::default();
    let mut failure = None;
    let status = loop {
        if state.residuals.r_kkt <= config.tol {
            break SolveStatus::Converged;
        }
        if stats.outer_iterations >= config.max_outer {
            break SolveStatus::IterCap;
        }
        if started.elapsed() >= config.time_limit {
            break SolveStatus::TimeCap;
        }
        let previous = state.residuals;
        let snapshot = (state.w.clone(), state.z.clone(), state.u.clone());
        match pal_step(&mut state, design, gamma, config) {
            Ok(step) => {
                stats.inner_iterations += step.newton;
                stats.cg_iterations += step.cg;
                stats.resumes += step.resumes;
                stats.stalled_inner += usize::from(step.stalled);
                stats.cg_capped += step.cg_capped;
            }
            Err(e) => {
                warn!("inner solve failed at outer iteration {}: {e}", state.k);
                (state.w, state.z, state.u) = snapshot;
                failure = Some(e.to_string());
                break SolveStatus::Failed;
            }
        }
        stats.outer_iterations += 1;
        stats.sigma_history.push(state.sigma);
        stats.residual_history.push(state.residuals);
        let prev = (stats.outer_iterations > 1).then_some(&previous);
        state.sigma = sigma_update(state.sigma, &state.residuals, prev, config.tol);
        debug!(
            "pal k={} r_kkt={:.3e} (res1 {:.2e}, res2 {:.2e}, res3 {:.2e}) sigma={:.3e}",
            state.k, state.residuals.r_kkt, state.residuals.res1, state.residuals.res2, state.residuals.res3, state.sigma
        );
    };
    stats.elapsed = started.elapsed();
    let active = design.active();
    let reduced = ReducedTriple { w: state.w, z: state.z, u: state.u };
    Ok(SolveOutcome { triple: reduced.scatter(active), residuals: state.residuals, status, stats, sigma: state.sigma, failure })
}

/// Outer loop on the coefficients in `active`, warm-started from `init`.
pub fn pal_solve(problem: &MultiTaskProblem, gamma: f64, active: &ActiveIndexSet, init: &Triple, config: &PalConfig) -> Result<SolveOutcome> {
    let design = ReducedDesign::new(problem, active.clone())?;
    pal_solve_on(&design, gamma, init.gather(active), config)
}

/// The full-space method: every coefficient active.
pub fn ssnpal_full_solve(problem: &MultiTaskProblem, gamma: f64, init: &Triple, config: &PalConfig) -> Result<SolveOutcome> {
    let active = ActiveIndexSet::full(problem.d(), problem.n());
    pal_solve(problem, gamma, &active, init, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::kkt_residuals;
    use ndarray::array;

    fn report(res1: f64, res3: f64) -> ResidualReport {
        ResidualReport::new(res1, 0.0, res3)
    }

    #[test]
    fn sigma_increases_when_dual_leads() {
        assert_eq!(sigma_update(500.0, &report(1e-3, 1e-4), None, 1e-6), 750.0);
        assert_eq!(sigma_update(9e6, &report(1e-3, 1e-4), None, 1e-6), 1e7);
    }

    #[test]
    fn sigma_decreases_near_convergence() {
        let prev = report(1e-6, 1e-6);
        let cur = report(0.5e-6, 0.95e-6);
        assert_eq!(sigma_update(1.0, &cur, Some(&prev), 1e-6), 0.5);
        let cur = report(0.95e-6, 0.95e-6);
        assert_eq!(sigma_update(1.0, &cur, Some(&prev), 1e-6), 0.8);
        assert_eq!(sigma_update(1.0, &cur, Some(&prev), 1e-9), 0.9);
        assert_eq!(sigma_update(1e-5, &cur, Some(&prev), 1e-9), 1e-5);
    }

    #[test]
    fn sigma_default_branch() {
        let prev = report(1e-5, 1e-3);
        let cur = report(1e-5, 1e-5);
        assert!((sigma_update(10.0, &cur, Some(&prev), 1e-6) - 10.5).abs() < 1e-12);
        assert_eq!(sigma_update(10.0, &cur, None, 1e-6), 10.5);
    }

    #[test]
    fn inexactness_rules() {
        assert!(check_a1_a2(0.0, 0.0, 0.0, 2.0, 0.1, 0.5).satisfied());
        let c = check_a1_a2(0.05, 1.0, 1.0, 2.0, 0.1, 0.5);
        assert!(c.a1 && c.satisfied());
        let c = check_a1_a2(0.06, 1.0, 1.0, 2.0, 0.1, 0.5);
        assert!(!c.a1);
    }

    #[test]
    fn tolerance_sequences() {
        assert_eq!(eps_k(0, 1e-6), 0.5e-3);
        assert_eq!(eps_k(0, 1.0), 0.5);
        assert!((theta_k(2) - 0.405).abs() < 1e-15);
    }

    #[test]
    fn scalar_instance_reaches_bound() {
        let prob = MultiTaskProblem::new(vec![array![[1.0]]], vec![2.0]).unwrap();
        let cfg = PalConfig { tol: 1e-10, ..PalConfig::default() };
        let out = ssnpal_full_solve(&prob, 1.0, &Triple::zeros(1, 1), &cfg).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert!(out.stats.outer_iterations <= 10);
        assert!((out.triple.w.get(0, 0) - 1.0).abs() < 1e-8);
        assert!((out.triple.z.get(0, 0) - 1.0).abs() < 1e-8);
        assert!((out.triple.u.get(0, 0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn optimal_start_is_fixed() {
        let prob = MultiTaskProblem::new(vec![array![[1.0]]], vec![2.0]).unwrap();
        let one = CoefMatrix::from_rows(&[vec![1.0]]).unwrap();
        let init = Triple { w: one.clone(), z: one.clone(), u: one };
        let out = ssnpal_full_solve(&prob, 1.0, &init, &PalConfig::default()).unwrap();
        assert_eq!(out.stats.outer_iterations, 0);
        assert_eq!(out.triple, init);
    }

    #[test]
    fn reduced_residuals_match_model() {
        let prob = MultiTaskProblem::new(
            vec![array![[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]], array![[3.0, -1.0, 0.2], [1.0, 1.0, 1.0]]],
            vec![1.0, -2.0, 0.5, 0.3],
        )
        .unwrap();
        let active = ActiveIndexSet::new(3, 2, vec![0, 2, 4]).unwrap();
        let design = ReducedDesign::new(&prob, active.clone()).unwrap();
        let (w, z, u) = (vec![0.3, -0.2, 0.1], vec![0.25, -0.1, 0.0], vec![1.0, 0.5, -0.4]);
        let ours = reduced_residuals(&design, 0.4, &w, &z, &u).unwrap();
        let t = ReducedTriple { w, z, u }.scatter(&active);
        let theirs = kkt_residuals(&prob, &t.w, &t.z, &t.u, 0.4, Some(&active)).unwrap();
        assert!((ours.res1 - theirs.res1).abs() < 1e-15);
        assert!((ours.res2 - theirs.res2).abs() < 1e-15);
        assert!((ours.res3 - theirs.res3).abs() < 1e-15);
    }
}
