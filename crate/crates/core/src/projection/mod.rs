//! Euclidean projection onto the l1,inf ball `{W : sum_i max_j |W_ij| <= gamma}`.
//!
//! The projection clamps every row to its own l-inf radius `t_r`,
//! `W_rc = sign(Q_rc) * min(|Q_rc|, t_r)`, where the radii come from a single
//! multiplier `theta >= 0`: row `r` keeps `t_r(theta)` with
//! `sum_c max(|Q_rc| - t_r, 0) = theta`. Each `t_r(.)` is piecewise linear and
//! nonincreasing, so `theta` is located by bisection on `sum_r t_r(theta) = gamma`
//! and then snapped onto its exact linear segment.

mod certificate;

pub use certificate::{kkt_certificate, CertificateReport};

use crate::error::{Error, Result};
use crate::linalg::sign;
use crate::model::{ActiveIndexSet, CoefMatrix};

/// Relative tolerance for "equal" in pattern and index-set tests.
pub const EQ_RTOL: f64 = 1e-10;

/// `|a - b| <= 1e-10 * max(1, |a|, |b|)`
#[inline]
pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= EQ_RTOL * 1f64.max(a.abs()).max(b.abs())
}

/// The sign/argmax structure of a point `Q` and the polyhedral description of
/// the ball it induces.
///
/// `lambda[i]` is the smallest column attaining `max_j |Q_ij|`; `t` holds
/// `sign(Q_{i,lambda_i})` at that column and zero elsewhere; `b = Vec(t)`;
/// `lambda_lin[i]` is the linear index of `(i, lambda[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMaxPattern {
    pub lambda: Vec<usize>,
    pub t: CoefMatrix,
    pub sign_diag: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: f64,
    pub lambda_lin: Vec<usize>,
}

impl SignMaxPattern {
    pub fn d(&self) -> usize {
        self.t.d()
    }

    pub fn n(&self) -> usize {
        self.t.n()
    }
}

pub fn extract_pattern(q: &CoefMatrix, gamma: f64) -> SignMaxPattern {
    let (d, n) = q.shape();
    let mut lambda = vec![0; d];
    let mut t = CoefMatrix::zeros(d, n);
    for (i, li) in lambda.iter_mut().enumerate() {
        let mut best = q.get(i, 0).abs();
        for j in 1..n {
            let a = q.get(i, j).abs();
            if a > best {
                best = a;
                *li = j;
            }
        }
        t.set(i, *li, sign(q.get(i, *li)));
    }
    let lambda_lin = lambda.iter().enumerate().map(|(i, &l)| l * d + i).collect();
    let sign_diag = q.as_slice().iter().map(|&v| sign(v)).collect();
    let b = t.as_slice().to_vec();
    SignMaxPattern { lambda, t, sign_diag, b, gamma, lambda_lin }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub w: CoefMatrix,
    /// Per-row l-inf radius of the projection.
    pub row_radius: Vec<f64>,
    /// Multiplier of the ball constraint (0 when `Q` is already feasible).
    pub theta: f64,
    pub on_boundary: bool,
}

/// Sorted absolute values of one row with the breakpoints of `t_r(theta)`.
struct RowProfile {
    /// `prefix[k-1] = a_1 + ... + a_k` for the descending absolute values.
    prefix: Vec<f64>,
    /// `breaks[k-1] = prefix_k - k * a_{k+1}` (with `a_{n+1} = 0`); nondecreasing.
    breaks: Vec<f64>,
}

impl RowProfile {
    fn new(mut abs: Vec<f64>) -> Self {
        abs.sort_unstable_by(|a, b| b.total_cmp(a));
        let n = abs.len();
        let mut prefix = Vec::with_capacity(n);
        let mut breaks = Vec::with_capacity(n);
        let mut s = 0.0;
        for k in 0..n {
            s += abs[k];
            prefix.push(s);
            let next = if k + 1 < n { abs[k + 1] } else { 0.0 };
            breaks.push(s - (k + 1) as f64 * next);
        }
        Self { prefix, breaks }
    }

    fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    /// Segment `k` (1-based count of clamped entries) containing `theta`, or
    /// `None` when the row is zeroed out.
    fn segment(&self, theta: f64) -> Option<usize> {
        if theta >= self.total() {
            return None;
        }
        Some(self.breaks.partition_point(|&b| b < theta) + 1)
    }

    fn radius(&self, theta: f64) -> f64 {
        match self.segment(theta) {
            None => 0.0,
            Some(k) => ((self.prefix[k - 1] - theta) / k as f64).max(0.0),
        }
    }
}

/// Projection of `Q` onto the ball of radius `gamma`.
///
/// # Panics
/// If `gamma` is not positive.
pub fn project(q: &CoefMatrix, gamma: f64) -> ProjectionResult {
    assert!(gamma > 0.0, "projection radius must be positive");
    let (d, n) = q.shape();
    let rows: Vec<RowProfile> = (0..d).map(|i| RowProfile::new(q.row(i).iter().map(|v| v.abs()).collect())).collect();
    let row_max: Vec<f64> = rows.iter().map(|r| r.prefix[0]).collect();
    let norm: f64 = row_max.iter().sum();

    if norm <= gamma {
        return ProjectionResult { w: q.clone(), row_radius: row_max, theta: 0.0, on_boundary: approx_eq(norm, gamma) };
    }

    let total = |theta: f64| rows.iter().map(|r| r.radius(theta)).sum::<f64>();
    let mut lo = 0.0_f64;
    let mut hi = rows.iter().map(RowProfile::total).fold(0.0, f64::max);
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if total(mid) > gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let theta = snap_theta(&rows, mid, gamma).unwrap_or(mid);

    let mut row_radius: Vec<f64> = rows.iter().map(|r| r.radius(theta)).collect();
    // `prefix - theta` cancels when gamma is tiny relative to Q; keep the budget exact.
    let budget: f64 = row_radius.iter().sum();
    if budget > gamma {
        row_radius.iter_mut().for_each(|t| *t *= gamma / budget);
    }
    let mut w = CoefMatrix::zeros(d, n);
    for j in 0..n {
        for (i, &t) in row_radius.iter().enumerate() {
            let v = q.get(i, j);
            w.set(i, j, sign(v) * v.abs().min(t));
        }
    }
    ProjectionResult { w, row_radius, theta, on_boundary: true }
}

/// Solves `sum_r t_r(theta) = gamma` exactly on the linear piece selected at
/// `theta0`; returns `None` if the solution leaves that piece.
fn snap_theta(rows: &[RowProfile], theta0: f64, gamma: f64) -> Option<f64> {
    let mut num = -gamma;
    let mut den = 0.0;
    let mut segs = Vec::with_capacity(rows.len());
    for r in rows {
        let seg = r.segment(theta0);
        if let Some(k) = seg {
            num += r.prefix[k - 1] / k as f64;
            den += 1.0 / k as f64;
        }
        segs.push(seg);
    }
    if den == 0.0 {
        return None;
    }
    let theta = num / den;
    let slack = 1e-12 * theta0.abs().max(1e-300);
    if theta < 0.0 {
        return None;
    }
    for (r, seg) in rows.iter().zip(segs) {
        let ok = match seg {
            None => theta >= r.total() - slack,
            Some(k) => {
                let lower = if k == 1 { 0.0 } else { r.breaks[k - 2] };
                theta >= lower - slack && theta <= r.breaks[k - 1] + slack
            }
        };
        if !ok {
            return None;
        }
    }
    Some(theta)
}

/// Projection of a reduced vector: zero-extend over `active`, project, restrict.
///
/// Projection never turns a zero entry nonzero, so this is the projection onto
/// the ball intersected with the coordinate subspace of `active`.
pub fn project_reduced(values: &[f64], active: &ActiveIndexSet, gamma: f64) -> Result<Vec<f64>> {
    if values.len() != active.len() {
        return Err(Error::DimensionMismatch(format!(
            "reduced vector has length {}, active set has {}",
            values.len(),
            active.len()
        )));
    }
    let full = CoefMatrix::scatter(active, values);
    Ok(project(&full, gamma).w.gather(active))
}
