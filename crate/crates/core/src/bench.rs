//! Benchmark runner comparing the four solvers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::admm::{admm_solve, AdmmConfig};
use crate::error::{Error, Result};
use crate::model::{kkt_residuals, ActiveIndexSet, MultiTaskProblem};
use crate::pal::{ssnpal_full_solve, PalConfig, SolveStatus, Triple};
use crate::sieving::{solve_path, PathOptions, ReducedSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    AsSsnpal,
    Ssnpal,
    AsAdmm,
    Admm,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [Self::AsSsnpal, Self::AsAdmm, Self::Ssnpal, Self::Admm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AsSsnpal => "as-ssnpal",
            Self::Ssnpal => "ssnpal",
            Self::AsAdmm => "as-admm",
            Self::Admm => "admm",
        }
    }

    pub fn is_sieved(self) -> bool {
        matches!(self, Self::AsSsnpal | Self::AsAdmm)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown solver `{s}` (expected as-ssnpal, ssnpal, as-admm or admm)")))
    }
}

/// Iteration and time limits shared by every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLimits {
    /// Outer iteration cap; `None` keeps each solver's default.
    pub max_iter: Option<usize>,
    pub time_limit: Duration,
    /// Sieving bound; `None` uses the cell's tolerance.
    pub eps: Option<f64>,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self { max_iter: None, time_limit: Duration::from_secs(7200), eps: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub solver: SolverKind,
    pub gamma: f64,
    pub tol: f64,
    pub time_s: f64,
    /// Recomputed from the returned triple.
    pub r_kkt: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub sieve_rounds: usize,
    pub active_size: usize,
    pub status: SolveStatus,
}

/// A finished cell together with the solution it produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub triple: Triple,
    pub active: ActiveIndexSet,
}

pub fn pal_config(tol: f64, limits: &RunLimits) -> PalConfig {
    let mut cfg = PalConfig { tol, time_limit: limits.time_limit, ..PalConfig::default() };
    if let Some(k) = limits.max_iter {
        cfg.max_outer = k;
    }
    cfg
}

pub fn admm_config(tol: f64, limits: &RunLimits) -> AdmmConfig {
    let mut cfg = AdmmConfig { tol, time_limit: limits.time_limit, ..AdmmConfig::default() };
    if let Some(k) = limits.max_iter {
        cfg.max_iter = k;
    }
    cfg
}

/// Runs one `(solver, gamma, tol)` cell from the zero triple.
///
/// Sieved solvers report residuals on their final active set; full-space
/// solvers on every coefficient.
pub fn run_solver(dataset: &str, problem: &MultiTaskProblem, solver: SolverKind, gamma: f64, tol: f64, limits: &RunLimits) -> Result<RunOutput> {
    let (d, n) = (problem.d(), problem.n());
    let started = Instant::now();
    let (triple, active, status, outer, inner, rounds) = match solver {
        SolverKind::Ssnpal | SolverKind::Admm => {
            let zero = Triple::zeros(d, n);
            let out = if solver == SolverKind::Ssnpal {
                ssnpal_full_solve(problem, gamma, &zero, &pal_config(tol, limits))?
            } else {
                admm_solve(problem, gamma, &zero, &admm_config(tol, limits))?
            };
            let s = &out.stats;
            (out.triple.clone(), ActiveIndexSet::full(d, n), out.status, s.outer_iterations, s.inner_iterations, 0)
        }
        SolverKind::AsSsnpal | SolverKind::AsAdmm => {
            let reduced = if solver == SolverKind::AsSsnpal {
                ReducedSolver::Pal(pal_config(tol, limits))
            } else {
                ReducedSolver::Admm(admm_config(tol, limits))
            };
            let options = PathOptions::new(limits.eps.unwrap_or(tol), reduced);
            let path = solve_path(problem, &[gamma], &options)?;
            match path.records.into_iter().next() {
                Some(rec) => {
                    let status = if path.failure.is_some() { SolveStatus::Failed } else { rec.status };
                    (rec.triple, rec.active, status, rec.outer_iterations, rec.inner_iterations, rec.rounds)
                }
                None => return Err(Error::InvalidInput("sieving produced no record".into())),
            }
        }
    };
    let time_s = started.elapsed().as_secs_f64();
    let restrict = solver.is_sieved().then_some(&active);
    let res = kkt_residuals(problem, &triple.w, &triple.z, &triple.u, gamma, restrict)?;
    let record = RunRecord {
        dataset: dataset.to_string(),
        solver,
        gamma,
        tol,
        time_s,
        r_kkt: res.r_kkt,
        outer_iters: outer,
        inner_iters: inner,
        sieve_rounds: rounds,
        active_size: active.len(),
        status,
    };
    Ok(RunOutput { record, triple, active })
}

/// Solution path over `gammas`: sieved solvers run one sieving path, full-space
/// solvers warm-start each radius from the previous solution.
pub fn run_path(dataset: &str, problem: &MultiTaskProblem, solver: SolverKind, gammas: &[f64], tol: f64, limits: &RunLimits) -> Result<Vec<RunOutput>> {
    let (d, n) = (problem.d(), problem.n());
    let mut outputs = Vec::with_capacity(gammas.len());
    let mut push = |gamma: f64, time_s: f64, triple: Triple, active: ActiveIndexSet, status, outer, inner, rounds| -> Result<()> {
        let restrict = solver.is_sieved().then_some(&active);
        let res = kkt_residuals(problem, &triple.w, &triple.z, &triple.u, gamma, restrict)?;
        let record = RunRecord {
            dataset: dataset.to_string(),
            solver,
            gamma,
            tol,
            time_s,
            r_kkt: res.r_kkt,
            outer_iters: outer,
            inner_iters: inner,
            sieve_rounds: rounds,
            active_size: active.len(),
            status,
        };
        outputs.push(RunOutput { record, triple, active });
        Ok(())
    };
    if solver.is_sieved() {
        let reduced = if solver == SolverKind::AsSsnpal {
            ReducedSolver::Pal(pal_config(tol, limits))
        } else {
            ReducedSolver::Admm(admm_config(tol, limits))
        };
        let path = solve_path(problem, gammas, &PathOptions::new(limits.eps.unwrap_or(tol), reduced))?;
        let failed_at = path.failure.as_ref().map(|f| f.gamma);
        for rec in path.records {
            let status = if failed_at == Some(rec.gamma) { SolveStatus::Failed } else { rec.status };
            let (g, t) = (rec.gamma, rec.elapsed.as_secs_f64());
            push(g, t, rec.triple, rec.active, status, rec.outer_iterations, rec.inner_iterations, rec.rounds)?;
        }
    } else {
        if gammas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("radius grid must be strictly increasing".into()));
        }
        let mut init = Triple::zeros(d, n);
        for &gamma in gammas {
            let started = Instant::now();
            let out = if solver == SolverKind::Ssnpal {
                ssnpal_full_solve(problem, gamma, &init, &pal_config(tol, limits))?
            } else {
                admm_solve(problem, gamma, &init, &admm_config(tol, limits))?
            };
            let t = started.elapsed().as_secs_f64();
            init = out.triple.clone();
            let s = &out.stats;
            push(gamma, t, out.triple, ActiveIndexSet::full(d, n), out.status, s.outer_iterations, s.inner_iterations, 0)?;
        }
    }
    Ok(outputs)
}

/// Runs every `(solver, gamma, tol)` cell on up to `jobs` threads.
///
/// Records come back in solver, gamma, tol order regardless of `jobs`. A cell
/// that errors is recorded as failed.
pub fn run_benchmark(
    dataset: &str,
    problem: &MultiTaskProblem,
    gammas: &[f64],
    tols: &[f64],
    solvers: &[SolverKind],
    limits: &RunLimits,
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    let cells: Vec<(SolverKind, f64, f64)> = solvers
        .iter()
        .flat_map(|&s| gammas.iter().flat_map(move |&g| tols.iter().map(move |&t| (s, g, t))))
        .collect();
    let run_cell = |&(s, g, t): &(SolverKind, f64, f64)| -> RunRecord {
        match run_solver(dataset, problem, s, g, t, limits) {
            Ok(out) => out.record,
            Err(e) => {
                log::error!("{s} gamma={g} tol={t}: {e}");
                RunRecord {
                    dataset: dataset.to_string(),
                    solver: s,
                    gamma: g,
                    tol: t,
                    time_s: 0.0,
                    r_kkt: f64::NAN,
                    outer_iters: 0,
                    inner_iters: 0,
                    sieve_rounds: 0,
                    active_size: 0,
                    status: SolveStatus::Failed,
                }
            }
        }
    };
    if jobs <= 1 {
        return Ok(cells.iter().map(run_cell).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(run_cell).collect()))
}

pub const CSV_HEADER: [&str; 11] =
    ["dataset", "solver", "gamma", "tol", "time_s", "r_kkt", "outer_iters", "inner_iters", "sieve_rounds", "active_size", "status"];

pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.solver.to_string(),
            r.gamma.to_string(),
            r.tol.to_string(),
            format!("{:.3}", r.time_s),
            format!("{:e}", r.r_kkt),
            r.outer_iters.to_string(),
            r.inner_iters.to_string(),
            r.sieve_rounds.to_string(),
            r.active_size.to_string(),
            r.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
