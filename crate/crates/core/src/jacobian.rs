//! Closed-form generalized Jacobian of the l1,inf-ball projection.
//!
//! At a point `q` with projection `P`, every nonzero row of `P` moves as one
//! group: its argmax entry plus all entries clamped at the row radius share a
//! common magnitude, so the Jacobian averages signed perturbations over that
//! group. Free entries pass through unchanged, entries cut to zero are
//! frozen. When the budget constraint is active a rank-one term removes the
//! direction that would change `sum_r t_r`:
//!
//! ```text
//! N0 = G - f f^T / beta   (on the boundary)      N0 = G   (inside)
//! ```
//!
//! The operator is applied matrix-free in `O(nd)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{ActiveIndexSet, CoefMatrix};
use crate::projection::{approx_eq, ProjectionResult, SignMaxPattern};

/// Below this `beta` the rank-one correction is considered degenerate.
pub const BETA_MIN: f64 = 1e-12;

/// Index sets of the closed form (all 0-based linear indices, sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianIndexSets {
    /// Entries whose row argmax projects to zero (whole row cut).
    pub k1: Vec<usize>,
    /// Argmax positions `lambda(alpha_k) = k`.
    pub k2: Vec<usize>,
    /// Argmax positions that have tied partners.
    pub k3: Vec<usize>,
    /// For each `j` in `k3`, the non-argmax entries tied with it.
    pub k4: BTreeMap<usize, Vec<usize>>,
    /// `(F P)_k = 0`
    pub i1: Vec<usize>,
    /// `(D P)_k = 0`
    pub i2: Vec<usize>,
    /// Nonzero entries of `q` projected to zero.
    pub i3: Vec<usize>,
    /// `i2 \ (k1 u k2)`
    pub i4: Vec<usize>,
    pub d_hat: usize,
    pub beta: f64,
    pub boundary: bool,
}

fn is_zero(x: f64) -> bool {
    approx_eq(x, 0.0)
}

pub fn build_index_sets(q: &CoefMatrix, proj: &ProjectionResult, pattern: &SignMaxPattern) -> Result<JacobianIndexSets> {
    check_consistent(q, proj, pattern)?;
    let d = q.d();
    let nd = q.as_slice().len();
    let p = proj.w.as_slice();
    let s = &pattern.sign_diag;
    let lam = |k: usize| pattern.lambda_lin[k % d];

    let k1: Vec<usize> = (0..nd).filter(|&k| is_zero(p[lam(k)])).collect();
    let k2: Vec<usize> = (0..nd).filter(|&k| k == lam(k)).collect();
    let i1: Vec<usize> = (0..nd).filter(|&k| is_zero(s[k] * p[k])).collect();
    let i2: Vec<usize> = (0..nd)
        .filter(|&k| {
            let l = lam(k);
            approx_eq(s[k] * p[k], pattern.b[l] * p[l])
        })
        .collect();
    let i3: Vec<usize> = i1.iter().copied().filter(|&k| s[k] != 0.0).collect();

    let k1_mask = mask(nd, &k1);
    let k2_mask = mask(nd, &k2);
    let i4: Vec<usize> = i2.iter().copied().filter(|&k| !k1_mask[k] && !k2_mask[k]).collect();

    let mut k4: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &k in &i4 {
        k4.entry(lam(k)).or_default().push(k);
    }
    let k3: Vec<usize> = k4.keys().copied().collect();

    let d_hat = if k1.is_empty() { d } else { k2.iter().filter(|&&k| !k1_mask[k]).count() };
    let beta = d_hat as f64 - k4.values().map(|g| g.len() as f64 / (1.0 + g.len() as f64)).sum::<f64>();
    let bp = dot(&pattern.b, p);
    let boundary = approx_eq(bp, pattern.gamma);

    Ok(JacobianIndexSets { k1, k2, k3, k4, i1, i2, i3, i4, d_hat, beta, boundary })
}

fn mask(len: usize, idx: &[usize]) -> Vec<bool> {
    let mut m = vec![false; len];
    for &k in idx {
        m[k] = true;
    }
    m
}

/// The sets are only meaningful at the projection of `q`; catch mixed-up
/// inputs cheaply by checking shapes and the row-clamp form of `proj`.
fn check_consistent(q: &CoefMatrix, proj: &ProjectionResult, pattern: &SignMaxPattern) -> Result<()> {
    if q.shape() != proj.w.shape() || q.shape() != pattern.t.shape() || proj.row_radius.len() != q.d() {
        return Err(Error::InvalidInput("point, projection and pattern have different shapes".into()));
    }
    for j in 0..q.n() {
        for i in 0..q.d() {
            let v = q.get(i, j);
            let expect = v.signum() * v.abs().min(proj.row_radius[i]);
            let got = proj.w.get(i, j);
            if !(approx_eq(got, expect) || (v == 0.0 && got == 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) = {got} is not the projection of {v} (row radius {})",
                    proj.row_radius[i]
                )));
            }
        }
    }
    Ok(())
}

/// A tie group `{j} u K4(j)` with weight `1 / (1 + |K4(j)|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TieGroup {
    pub anchor: usize,
    pub members: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Identity,
    Zero,
    Group(usize),
}

/// Matrix-free representation of `N0`.
#[derive(Debug, Clone)]
pub struct StructuredProjectionJacobian {
    pub index_sets: JacobianIndexSets,
    pub sign_q: Vec<f64>,
    pub f: Vec<f64>,
    /// Indices where `G` acts as the identity.
    pub free_diag: Vec<usize>,
    pub groups: Vec<TieGroup>,
    role: Vec<Role>,
    /// `1 / beta` when the rank-one term applies.
    inv_beta: Option<f64>,
}

pub fn build_jacobian(q: &CoefMatrix, proj: &ProjectionResult, pattern: &SignMaxPattern) -> Result<StructuredProjectionJacobian> {
    let sets = build_index_sets(q, proj, pattern)?;
    let nd = q.as_slice().len();
    let sign_q = pattern.sign_diag.clone();

    let mut role = vec![Role::Zero; nd];
    let mut groups = Vec::with_capacity(sets.k3.len());
    for (&anchor, tied) in &sets.k4 {
        let weight = 1.0 / (1.0 + tied.len() as f64);
        let mut members = Vec::with_capacity(tied.len() + 1);
        members.push(anchor);
        members.extend_from_slice(tied);
        for &k in &members {
            role[k] = Role::Group(groups.len());
        }
        groups.push(TieGroup { anchor, members, weight });
    }
    let i3 = mask(nd, &sets.i3);
    let mut free_diag = Vec::new();
    for k in 0..nd {
        if !i3[k] && role[k] == Role::Zero {
            role[k] = Role::Identity;
            free_diag.push(k);
        }
    }

    let mut f = vec![0.0; nd];
    let k1 = mask(nd, &sets.k1);
    for &k in &sets.k2 {
        if !k1[k] && !sets.k4.contains_key(&k) {
            f[k] = sign_q[k];
        }
    }
    for g in &groups {
        for &k in &g.members {
            f[k] = sign_q[k] * g.weight;
        }
    }

    let inv_beta = if sets.boundary {
        if sets.beta <= BETA_MIN {
            log::warn!("degenerate projection pattern: beta = {:e} with {} groups", sets.beta, groups.len());
            return Err(Error::DegeneratePattern { beta: sets.beta });
        }
        Some(1.0 / sets.beta)
    } else {
        None
    };

    Ok(StructuredProjectionJacobian { index_sets: sets, sign_q, f, free_diag, groups, role, inv_beta })
}

impl StructuredProjectionJacobian {
    pub fn dim(&self) -> usize {
        self.role.len()
    }

    /// `N0 v` in `O(nd)`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "vector length must match the Jacobian");
        let mut out = vec![0.0; v.len()];
        for &k in &self.free_diag {
            out[k] = v[k];
        }
        for g in &self.groups {
            let avg = g.weight * g.members.iter().map(|&k| self.sign_q[k] * v[k]).sum::<f64>();
            for &k in &g.members {
                out[k] = self.sign_q[k] * avg;
            }
        }
        if let Some(ib) = self.inv_beta {
            let c = ib * dot(&self.f, v);
            for (o, fk) in out.iter_mut().zip(&self.f) {
                *o -= c * fk;
            }
        }
        out
    }

    /// Principal submatrix `(N0)_{JJ}` applied to `v`: zero-extend, apply, restrict.
    pub fn apply_reduced(&self, active: &ActiveIndexSet, v: &[f64]) -> Result<Vec<f64>> {
        if active.d() * active.n() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "active set spans {} coefficients, Jacobian has {}",
                active.d() * active.n(),
                self.dim()
            )));
        }
        if v.len() != active.len() {
            return Err(Error::DimensionMismatch(format!("reduced vector has length {}, expected {}", v.len(), active.len())));
        }
        if active.is_full() {
            return Ok(self.apply(v));
        }
        let mut full = vec![0.0; self.dim()];
        for (&k, &x) in active.linear().iter().zip(v) {
            full[k] = x;
        }
        let out = self.apply(&full);
        Ok(active.linear().iter().map(|&k| out[k]).collect())
    }

    /// Dense `N0`; intended for small verification problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let nd = self.dim();
        let mut m = DMatrix::zeros(nd, nd);
        for &k in &self.free_diag {
            m[(k, k)] = 1.0;
        }
        for g in &self.groups {
            for &a in &g.members {
                for &b in &g.members {
                    m[(a, b)] = self.sign_q[a] * self.sign_q[b] * g.weight;
                }
            }
        }
        if let Some(ib) = self.inv_beta {
            for a in 0..nd {
                for b in 0..nd {
                    m[(a, b)] -= ib * (self.f[a] * self.f[b]);
                }
            }
        }
        m
    }

    pub fn is_boundary(&self) -> bool {
        self.inv_beta.is_some()
    }
}
