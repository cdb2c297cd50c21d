//! C interface to the multi-task Lasso solvers.
//!
//! Problems and solutions are opaque heap handles released with their `_free`
//! function. Every fallible call returns an `MtlStatus`; on failure the message
//! is kept per thread and read with `mtl_last_error`. Matrices crossing the
//! boundary are `d x n` coefficient arrays in column-major order (entry `(i, j)`
//! at `j * d + i`) unless stated otherwise. Panics never unwind into C.

#![allow(clippy::missing_safety_doc)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use mtlasso::bench::{run_path, run_solver, RunLimits, RunOutput, SolverKind};
use mtlasso::synthetic::{generate_synthetic, SyntheticSpec};
use mtlasso::{project, CoefMatrix, Error, MultiTaskProblem};
use ndarray::Array2;

pub const MTL_SOLVER_AS_SSNPAL: c_int = 0;
pub const MTL_SOLVER_SSNPAL: c_int = 1;
pub const MTL_SOLVER_AS_ADMM: c_int = 2;
pub const MTL_SOLVER_ADMM: c_int = 3;

/// Outcome codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Termination of a solve, as reported by `mtl_solution_status`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtlSolveStatus {
    Converged = 0,
    IterCap = 1,
    TimeCap = 2,
    Failed = 3,
}

/// Opaque problem handle.
pub struct MtlProblem {
    inner: MultiTaskProblem,
}

/// Opaque solution handle for one radius.
pub struct MtlSolution {
    inner: RunOutput,
}

/// Solver limits; zero fields select the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MtlOptions {
    /// Outer iteration cap (0: solver default).
    pub max_iter: usize,
    /// Wall-clock budget in seconds (0: 7200).
    pub time_limit_s: f64,
    /// Sieving bound (0: the tolerance).
    pub eps: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut buf = e.borrow_mut();
        buf.clear();
        buf.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> MtlStatus {
    match err {
        Error::DimensionMismatch(_) | Error::IndexOutOfRange { .. } => MtlStatus::DimensionMismatch,
        Error::InvalidInput(_) | Error::Parse { .. } => MtlStatus::InvalidInput,
        Error::DegeneratePattern { .. } | Error::LineSearch { .. } => MtlStatus::Numerical,
        Error::Io(_) | Error::Csv(_) => MtlStatus::Io,
    }
}

fn fail(status: MtlStatus, msg: &str) -> MtlStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MtlStatus>) -> MtlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(MtlStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: mtlasso::Result<T>) -> Result<T, MtlStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MtlStatus> {
    if p.is_null() {
        Err(fail(MtlStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn solver_kind(code: c_int) -> Result<SolverKind, MtlStatus> {
    match code {
        MTL_SOLVER_AS_SSNPAL => Ok(SolverKind::AsSsnpal),
        MTL_SOLVER_SSNPAL => Ok(SolverKind::Ssnpal),
        MTL_SOLVER_AS_ADMM => Ok(SolverKind::AsAdmm),
        MTL_SOLVER_ADMM => Ok(SolverKind::Admm),
        _ => Err(fail(MtlStatus::InvalidInput, &format!("unknown solver code {code}"))),
    }
}

fn limits(opts: *const MtlOptions) -> Result<RunLimits, MtlStatus> {
    let o = if opts.is_null() { MtlOptions::default() } else { unsafe { *opts } };
    let mut l = RunLimits::default();
    if o.max_iter > 0 {
        l.max_iter = Some(o.max_iter);
    }
    if o.time_limit_s.is_nan() || o.time_limit_s < 0.0 || o.eps.is_nan() || o.eps < 0.0 {
        return Err(fail(MtlStatus::InvalidInput, "options must be nonnegative"));
    }
    if o.time_limit_s > 0.0 {
        l.time_limit = Duration::from_secs_f64(o.time_limit_s);
    }
    if o.eps > 0.0 {
        l.eps = Some(o.eps);
    }
    Ok(l)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
#[no_mangle]
pub unsafe extern "C" fn mtl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let k = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, k);
            *buf.add(k) = 0;
        }
        msg.len()
    })
}

/// Builds a problem from `n` task blocks stacked vertically.
///
/// `x` holds `sum(m_sizes)` rows of `d` features in row-major order and `y`
/// the stacked responses.
#[no_mangle]
pub unsafe extern "C" fn mtl_problem_new(
    d: usize,
    n: usize,
    m_sizes: *const usize,
    x: *const f64,
    y: *const f64,
    out: *mut *mut MtlProblem,
) -> MtlStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(m_sizes, "m_sizes")?;
        non_null(x, "x")?;
        non_null(y, "y")?;
        if d == 0 || n == 0 {
            return Err(fail(MtlStatus::InvalidInput, "d and n must be positive"));
        }
        let sizes = std::slice::from_raw_parts(m_sizes, n);
        let m = sizes.iter().try_fold(0usize, |a, &s| a.checked_add(s));
        let Some(m) = m.filter(|m| m.checked_mul(d).is_some()) else {
            return Err(fail(MtlStatus::InvalidInput, "sample count overflows"));
        };
        let xs = std::slice::from_raw_parts(x, m * d);
        let ys = std::slice::from_raw_parts(y, m).to_vec();
        let mut blocks = Vec::with_capacity(n);
        let mut row = 0;
        for &s in sizes {
            let block = Array2::from_shape_vec((s, d), xs[row * d..(row + s) * d].to_vec())
                .map_err(|e| fail(MtlStatus::DimensionMismatch, &e.to_string()))?;
            blocks.push(block);
            row += s;
        }
        let inner = lift(MultiTaskProblem::new(blocks, ys))?;
        *out = Box::into_raw(Box::new(MtlProblem { inner }));
        Ok(())
    })
}

/// Draws the synthetic benchmark instance with `20 * scale` tasks.
#[no_mangle]
pub unsafe extern "C" fn mtl_problem_synthetic(scale: usize, seed: u64, out: *mut *mut MtlProblem) -> MtlStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let (inner, _) = lift(generate_synthetic(&SyntheticSpec::new(scale, seed)))?;
        *out = Box::into_raw(Box::new(MtlProblem { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mtl_problem_free(problem: *mut MtlProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes the feature count, task count and total sample count.
#[no_mangle]
pub unsafe extern "C" fn mtl_problem_dims(problem: *const MtlProblem, d: *mut usize, n: *mut usize, m: *mut usize) -> MtlStatus {
    guard(|| {
        non_null(problem, "problem")?;
        let p = &(*problem).inner;
        for (dst, v) in [(d, p.d()), (n, p.n()), (m, p.m())] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// Euclidean projection of the `d x n` matrix `q` onto the l1,inf ball of
/// radius `gamma`. `out` may alias `q`; `theta` (nullable) receives the
/// multiplier.
#[no_mangle]
pub unsafe extern "C" fn mtl_project(q: *const f64, d: usize, n: usize, gamma: f64, out: *mut f64, theta: *mut f64) -> MtlStatus {
    guard(|| {
        non_null(q, "q")?;
        non_null(out, "out")?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(fail(MtlStatus::InvalidInput, "gamma must be finite and positive"));
        }
        let Some(len) = d.checked_mul(n) else {
            return Err(fail(MtlStatus::InvalidInput, "d * n overflows"));
        };
        let qm = lift(CoefMatrix::from_column_major(d, n, std::slice::from_raw_parts(q, len).to_vec()))?;
        if qm.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(fail(MtlStatus::InvalidInput, "q has non-finite entries"));
        }
        let res = project(&qm, gamma);
        ptr::copy(res.w.as_slice().as_ptr(), out, len);
        if !theta.is_null() {
            *theta = res.theta;
        }
        Ok(())
    })
}

/// Solves one radius from the zero start.
#[no_mangle]
pub unsafe extern "C" fn mtl_solve(
    problem: *const MtlProblem,
    solver: c_int,
    gamma: f64,
    tol: f64,
    options: *const MtlOptions,
    out: *mut *mut MtlSolution,
) -> MtlStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(problem, "problem")?;
        let kind = solver_kind(solver)?;
        let lim = limits(options)?;
        let inner = lift(run_solver("ffi", &(*problem).inner, kind, gamma, tol, &lim))?;
        *out = Box::into_raw(Box::new(MtlSolution { inner }));
        Ok(())
    })
}

/// Solves an increasing grid of `count` radii with warm starts, writing one
/// handle per radius into `out`. Entries past a path abort are set to null.
#[no_mangle]
pub unsafe extern "C" fn mtl_path(
    problem: *const MtlProblem,
    solver: c_int,
    gammas: *const f64,
    count: usize,
    tol: f64,
    options: *const MtlOptions,
    out: *mut *mut MtlSolution,
) -> MtlStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(gammas, "gammas")?;
        let slots = std::slice::from_raw_parts_mut(out, count);
        slots.iter_mut().for_each(|s| *s = ptr::null_mut());
        non_null(problem, "problem")?;
        let kind = solver_kind(solver)?;
        let lim = limits(options)?;
        let grid = std::slice::from_raw_parts(gammas, count);
        let outputs = lift(run_path("ffi", &(*problem).inner, kind, grid, tol, &lim))?;
        for (slot, inner) in slots.iter_mut().zip(outputs) {
            *slot = Box::into_raw(Box::new(MtlSolution { inner }));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mtl_solution_free(solution: *mut MtlSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Termination status, or `Failed` for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mtl_solution_status(solution: *const MtlSolution) -> MtlSolveStatus {
    use mtlasso::SolveStatus as S;
    if solution.is_null() {
        return MtlSolveStatus::Failed;
    }
    match (*solution).inner.record.status {
        S::Converged => MtlSolveStatus::Converged,
        S::IterCap => MtlSolveStatus::IterCap,
        S::TimeCap => MtlSolveStatus::TimeCap,
        S::Failed => MtlSolveStatus::Failed,
    }
}

/// Relative KKT residual of the returned triple, NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mtl_solution_residual(solution: *const MtlSolution) -> f64 {
    if solution.is_null() {
        return f64::NAN;
    }
    (*solution).inner.record.r_kkt
}

/// Iteration counts, active-set size and wall time; null outputs are skipped.
#[no_mangle]
pub unsafe extern "C" fn mtl_solution_stats(
    solution: *const MtlSolution,
    outer: *mut usize,
    inner: *mut usize,
    rounds: *mut usize,
    active: *mut usize,
    time_s: *mut f64,
) -> MtlStatus {
    guard(|| {
        non_null(solution, "solution")?;
        let r = &(*solution).inner.record;
        for (dst, v) in [(outer, r.outer_iters), (inner, r.inner_iters), (rounds, r.sieve_rounds), (active, r.active_size)] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        if !time_s.is_null() {
            *time_s = r.time_s;
        }
        Ok(())
    })
}

/// Copies `W`, `Z` or `U` (`which` = 0, 1, 2) into `buf` of `len >= d * n`.
#[no_mangle]
pub unsafe extern "C" fn mtl_solution_matrix(solution: *const MtlSolution, which: c_int, buf: *mut f64, len: usize) -> MtlStatus {
    guard(|| {
        non_null(solution, "solution")?;
        non_null(buf, "buf")?;
        let t = &(*solution).inner.triple;
        let m = match which {
            0 => &t.w,
            1 => &t.z,
            2 => &t.u,
            _ => return Err(fail(MtlStatus::InvalidInput, &format!("matrix selector {which} is not 0, 1 or 2"))),
        };
        let src = m.as_slice();
        if len < src.len() {
            return Err(fail(MtlStatus::DimensionMismatch, &format!("buffer holds {len} values, need {}", src.len())));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}
