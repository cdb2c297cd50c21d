//! Problem data, coefficient matrices and the blockwise design operator.
//!
//! Coefficients are `d x n` matrices (rows = features, columns = tasks) stored
//! column-major, so the flat storage of a [`CoefMatrix`] *is* its vectorization:
//! entry `(i, j)` sits at linear index `k = j * d + i` (0-based). Every module
//! goes through [`LinearIndexMap`] or this layout; nothing else flattens `W`.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{dist, dot, norm};
use crate::projection::project;

/// An `n`-task linear regression instance with per-task dense designs.
///
/// The stacked design is block diagonal; it is never materialized.
#[derive(Debug, Clone)]
pub struct MultiTaskProblem {
    blocks: Vec<Array2<f64>>,
    y: Vec<f64>,
    d: usize,
    offsets: Vec<usize>,
}

impl MultiTaskProblem {
    /// Builds a problem from `n` blocks of shape `m_i x d` and the stacked
    /// response `y = [y^1; ...; y^n]`.
    pub fn new(blocks: Vec<Array2<f64>>, y: Vec<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput("at least one task is required".into()));
        }
        let d = blocks[0].ncols();
        if d == 0 {
            return Err(Error::InvalidInput("feature count must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        for (j, b) in blocks.iter().enumerate() {
            if b.ncols() != d {
                return dim_err(format!("block {j} has {} columns, expected {d}", b.ncols()));
            }
            if b.nrows() == 0 {
                return Err(Error::InvalidInput(format!("block {j} has no rows")));
            }
            offsets.push(offsets[j] + b.nrows());
        }
        let m = offsets[blocks.len()];
        if y.len() != m {
            return dim_err(format!("response has length {}, blocks have {m} rows", y.len()));
        }
        Ok(Self { blocks, y, d, offsets })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn m_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &Array2<f64> {
        &self.blocks[j]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn task_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn y_segment(&self, j: usize) -> &[f64] {
        &self.y[self.task_range(j)]
    }

    pub fn index_map(&self) -> LinearIndexMap {
        LinearIndexMap::new(self.d, self.n())
    }

    fn check_coef(&self, w: &CoefMatrix) -> Result<()> {
        if w.shape() != (self.d, self.n()) {
            return dim_err(format!(
                "coefficient matrix is {:?}, problem expects {:?}",
                w.shape(),
                (self.d, self.n())
            ));
        }
        Ok(())
    }
}

/// Dense `d x n` real matrix in column-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefMatrix {
    d: usize,
    n: usize,
    data: Vec<f64>,
}

impl CoefMatrix {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self { d, n, data: vec![0.0; d * n] }
    }

    /// Wraps an existing vectorization (`k = j * d + i`).
    pub fn from_column_major(d: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * n {
            return dim_err(format!("{} entries cannot form a {d}x{n} matrix", data.len()));
        }
        Ok(Self { d, n, data })
    }

    /// Builds from nested rows, mostly convenient in tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(d, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return dim_err("ragged rows");
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d, self.n)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.d + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.d + i] = v;
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.d..(j + 1) * self.d]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|j| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// `sum_i max_j |W_ij|`
    pub fn l1inf_norm(&self) -> f64 {
        (0..self.d)
            .map(|i| (0..self.n).fold(0.0_f64, |acc, j| acc.max(self.get(i, j).abs())))
            .sum()
    }

    pub fn dist(&self, other: &CoefMatrix) -> f64 {
        dist(&self.data, &other.data)
    }

    pub fn sub(&self, other: &CoefMatrix) -> CoefMatrix {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        CoefMatrix { d: self.d, n: self.n, data }
    }

    /// Values of the active coordinates, in increasing linear order.
    pub fn gather(&self, active: &ActiveIndexSet) -> Vec<f64> {
        active.linear().iter().map(|&k| self.data[k]).collect()
    }

    /// Zero-extension of a reduced vector.
    pub fn scatter(active: &ActiveIndexSet, values: &[f64]) -> CoefMatrix {
        debug_assert_eq!(values.len(), active.len());
        let mut m = CoefMatrix::zeros(active.d(), active.n());
        for (&k, &v) in active.linear().iter().zip(values) {
            m.data[k] = v;
        }
        m
    }
}

/// The `k <-> (i, j)` bijection of the column-stacking convention.
///
/// Everything here is 0-based; the 1-based form `k = (j-1)d + i` differs only
/// by the shift at this boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIndexMap {
    pub d: usize,
    pub n: usize,
}

impl LinearIndexMap {
    pub fn new(d: usize, n: usize) -> Self {
        Self { d, n }
    }

    pub fn len(&self) -> usize {
        self.d * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn to_linear(&self, i: usize, j: usize) -> usize {
        j * self.d + i
    }

    #[inline]
    pub fn from_linear(&self, k: usize) -> (usize, usize) {
        (k % self.d, k / self.d)
    }

    /// Row (feature) index of linear index `k`.
    #[inline]
    pub fn alpha(&self, k: usize) -> usize {
        k % self.d
    }

    /// Column (task) index of linear index `k`.
    #[inline]
    pub fn eta(&self, k: usize) -> usize {
        k / self.d
    }
}

/// A set of coefficient positions allowed to be nonzero, kept as sorted linear
/// indices. Entries `(i, j)` are derived through [`LinearIndexMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveIndexSet {
    map: LinearIndexMap,
    linear: Vec<usize>,
}

impl ActiveIndexSet {
    pub fn new(d: usize, n: usize, mut linear: Vec<usize>) -> Result<Self> {
        let len = d * n;
        if let Some(&bad) = linear.iter().find(|&&k| k >= len) {
            return Err(Error::IndexOutOfRange { index: bad, len });
        }
        linear.sort_unstable();
        linear.dedup();
        Ok(Self { map: LinearIndexMap::new(d, n), linear })
    }

    pub fn from_entries(d: usize, n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let map = LinearIndexMap::new(d, n);
        let mut linear = Vec::new();
        for (i, j) in entries {
            if i >= d || j >= n {
                return Err(Error::IndexOutOfRange { index: map.to_linear(i.min(d), j), len: d * n });
            }
            linear.push(map.to_linear(i, j));
        }
        Self::new(d, n, linear)
    }

    pub fn full(d: usize, n: usize) -> Self {
        Self { map: LinearIndexMap::new(d, n), linear: (0..d * n).collect() }
    }

    pub fn d(&self) -> usize {
        self.map.d
    }

    pub fn n(&self) -> usize {
        self.map.n
    }

    pub fn map(&self) -> LinearIndexMap {
        self.map
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.linear.len() == self.map.len()
    }

    pub fn linear(&self) -> &[usize] {
        &self.linear
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.linear.iter().map(|&k| self.map.from_linear(k))
    }

    pub fn contains(&self, k: usize) -> bool {
        self.linear.binary_search(&k).is_ok()
    }

    /// Position of linear index `k` inside the reduced vector.
    pub fn position(&self, k: usize) -> Option<usize> {
        self.linear.binary_search(&k).ok()
    }

    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.map.len() - self.len());
        let mut it = self.linear.iter().peekable();
        for k in 0..self.map.len() {
            if it.peek() == Some(&&k) {
                it.next();
            } else {
                out.push(k);
            }
        }
        out
    }

    pub fn union(&self, extra: &[usize]) -> Result<Self> {
        let mut linear = self.linear.clone();
        linear.extend_from_slice(extra);
        Self::new(self.map.d, self.map.n, linear)
    }
}

/// Relative KKT residuals of a `(W, Z, U)` triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub res1: f64,
    pub res2: f64,
    pub res3: f64,
    pub r_kkt: f64,
}

impl ResidualReport {
    pub fn new(res1: f64, res2: f64, res3: f64) -> Self {
        Self { res1, res2, res3, r_kkt: res1.max(res2).max(res3) }
    }
}

/// `X(W) = [X^1 w^1; ...; X^n w^n]`
pub fn apply_design(problem: &MultiTaskProblem, w: &CoefMatrix) -> Result<Vec<f64>> {
    problem.check_coef(w)?;
    let mut out = vec![0.0; problem.m()];
    for (j, block) in problem.blocks.iter().enumerate() {
        let seg = block.dot(&ArrayView1::from(w.column(j)));
        out[problem.task_range(j)].copy_from_slice(seg.as_slice().expect("contiguous"));
    }
    Ok(out)
}

/// Adjoint of [`apply_design`]: column `j` is `(X^j)^T r_j`.
pub fn adjoint_design(problem: &MultiTaskProblem, r: &[f64]) -> Result<CoefMatrix> {
    if r.len() != problem.m() {
        return dim_err(format!("vector has length {}, expected {}", r.len(), problem.m()));
    }
    let mut out = CoefMatrix::zeros(problem.d, problem.n());
    for (j, block) in problem.blocks.iter().enumerate() {
        let seg = block.t().dot(&ArrayView1::from(&r[problem.task_range(j)]));
        out.column_mut(j).copy_from_slice(seg.as_slice().expect("contiguous"));
    }
    Ok(out)
}

/// Gradient of the least-squares loss, `X*(X(W) - y)`.
pub fn loss_gradient(problem: &MultiTaskProblem, w: &CoefMatrix) -> Result<CoefMatrix> {
    let mut r = apply_design(problem, w)?;
    for (ri, yi) in r.iter_mut().zip(&problem.y) {
        *ri -= yi;
    }
    adjoint_design(problem, &r)
}

/// `R(W) = W - Proj(W - X*(X(W) - y))`; zero exactly at minimizers.
pub fn proximal_residual(problem: &MultiTaskProblem, w: &CoefMatrix, gamma: f64) -> Result<CoefMatrix> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let g = loss_gradient(problem, w)?;
    let step = w.sub(&g);
    let p = project(&step, gamma);
    Ok(w.sub(&p.w))
}

/// Relative residuals `Res1`, `Res2`, `Res3`.
///
/// With `active`, the stationarity term is measured on the active coordinates
/// only (the restricted problem's KKT system); without it the full-space form
/// is used.
pub fn kkt_residuals(
    problem: &MultiTaskProblem,
    w: &CoefMatrix,
    z: &CoefMatrix,
    u: &CoefMatrix,
    gamma: f64,
    active: Option<&ActiveIndexSet>,
) -> Result<ResidualReport> {
    problem.check_coef(w)?;
    problem.check_coef(z)?;
    problem.check_coef(u)?;
    let res1 = w.dist(z) / (1.0 + w.frobenius_norm() + z.frobenius_norm());

    let zu = CoefMatrix::from_column_major(z.d, z.n, z.data.iter().zip(&u.data).map(|(a, b)| a + b).collect())?;
    let pz = project(&zu, gamma);
    let res2 = z.dist(&pz.w) / (1.0 + z.frobenius_norm() + u.frobenius_norm());

    let g = loss_gradient(problem, w)?;
    let res3 = match active {
        Some(a) => {
            let gb = g.gather(a);
            let ub = u.gather(a);
            let num: f64 = gb.iter().zip(&ub).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
            num / (1.0 + norm(&ub) + norm(&gb))
        }
        None => {
            let num: f64 = g.data.iter().zip(&u.data).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
            num / (1.0 + u.frobenius_norm() + g.frobenius_norm())
        }
    };
    Ok(ResidualReport::new(res1, res2, res3))
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

const POWER_MAX_ITER: usize = 1000;
const POWER_RTOL: f64 = 1e-9;

/// Largest eigenvalue of `X*X` by power iteration.
///
/// `X*X` is block diagonal, so each task block is iterated on its own (all-ones
/// start) and the largest block eigenvalue is returned.
pub fn spectral_norm_estimate(problem: &MultiTaskProblem) -> SpectralEstimate {
    let mut best = SpectralEstimate { value: 0.0, converged: true, iterations: 0 };
    for block in &problem.blocks {
        let d = block.ncols();
        let mut v = ndarray::Array1::from_elem(d, 1.0 / (d as f64).sqrt());
        let mut lambda = 0.0;
        let mut converged = false;
        let mut iters = 0;
        for it in 0..POWER_MAX_ITER {
            iters = it + 1;
            let xv = block.dot(&v);
            let av = block.t().dot(&xv);
            let rayleigh = dot(v.as_slice().unwrap(), av.as_slice().unwrap());
            let nav = norm(av.as_slice().unwrap());
            if nav == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            v = av / nav;
            if it > 0 && (rayleigh - lambda).abs() <= POWER_RTOL * rayleigh.abs() {
                lambda = rayleigh;
                converged = true;
                break;
            }
            lambda = rayleigh;
        }
        if !converged {
            log::warn!("power iteration did not converge in {POWER_MAX_ITER} iterations; using best estimate");
        }
        if lambda > best.value {
            best.value = lambda;
        }
        best.converged &= converged;
        best.iterations = best.iterations.max(iters);
    }
    best
}

/// The design restricted to a set of active coefficient columns.
///
/// Because the active indices are sorted by linear index, the coordinates of
/// task `j` form one contiguous range of the reduced vector.
#[derive(Debug, Clone)]
pub struct ReducedDesign<'a> {
    problem: &'a MultiTaskProblem,
    active: ActiveIndexSet,
    tasks: Vec<TaskColumns>,
    xty: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TaskColumns {
    range: std::ops::Range<usize>,
    sub: Array2<f64>,
}

impl<'a> ReducedDesign<'a> {
    pub fn new(problem: &'a MultiTaskProblem, active: ActiveIndexSet) -> Result<Self> {
        if active.d() != problem.d() || active.n() != problem.n() {
            return dim_err("active set dimensions differ from the problem");
        }
        let map = active.map();
        let mut tasks = Vec::with_capacity(problem.n());
        let mut start = 0;
        for j in 0..problem.n() {
            let feats: Vec<usize> = active.linear()[start..]
                .iter()
                .take_while(|&&k| map.eta(k) == j)
                .map(|&k| map.alpha(k))
                .collect();
            let range = start..start + feats.len();
            start = range.end;
            let sub = problem.block(j).select(Axis(1), &feats);
            tasks.push(TaskColumns { range, sub });
        }
        let mut design = Self { problem, active, tasks, xty: Vec::new() };
        design.xty = design.adjoint(problem.y());
        Ok(design)
    }

    pub fn full(problem: &'a MultiTaskProblem) -> Self {
        Self::new(problem, ActiveIndexSet::full(problem.d(), problem.n())).expect("full set matches")
    }

    pub fn problem(&self) -> &'a MultiTaskProblem {
        self.problem
    }

    pub fn active(&self) -> &ActiveIndexSet {
        &self.active
    }

    pub fn t(&self) -> usize {
        self.active.len()
    }

    /// `X_J^T y`
    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn apply(&self, wbar: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.m()];
        for (j, tc) in self.tasks.iter().enumerate() {
            if tc.range.is_empty() {
                continue;
            }
            let seg = tc.sub.dot(&ArrayView1::from(&wbar[tc.range.clone()]));
            out[self.problem.task_range(j)].copy_from_slice(seg.as_slice().expect("contiguous"));
        }
        out
    }

    pub fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.t()];
        for (j, tc) in self.tasks.iter().enumerate() {
            if tc.range.is_empty() {
                continue;
            }
            let seg = tc.sub.t().dot(&ArrayView1::from(&r[self.problem.task_range(j)]));
            out[tc.range.clone()].copy_from_slice(seg.as_slice().expect("contiguous"));
        }
        out
    }

    /// `X_J^T X_J h`
    pub fn gram_apply(&self, h: &[f64]) -> Vec<f64> {
        self.adjoint(&self.apply(h))
    }

    /// `X_J w - y`
    pub fn residual(&self, wbar: &[f64]) -> Vec<f64> {
        let mut r = self.apply(wbar);
        for (ri, yi) in r.iter_mut().zip(self.problem.y()) {
            *ri -= yi;
        }
        r
    }

    /// Reduced loss gradient `X_J^T (X_J w - y)`.
    pub fn gradient(&self, wbar: &[f64]) -> Vec<f64> {
        self.adjoint(&self.residual(wbar))
    }

    /// Per-task sub-blocks `(range in the reduced vector, m_j x t_j matrix)`.
    pub fn task_blocks(&self) -> impl Iterator<Item = (std::ops::Range<usize>, &Array2<f64>)> + '_ {
        self.tasks.iter().map(|t| (t.range.clone(), &t.sub))
    }
}
