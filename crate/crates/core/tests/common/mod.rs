//! Helpers shared by the integration tests.
#![allow(dead_code)]

use mtlasso::model::CoefMatrix;
use mtlasso::projection::approx_eq;
use mtlasso::MultiTaskProblem;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_coef(rng: &mut ChaCha8Rng, d: usize, n: usize, scale: f64) -> CoefMatrix {
    let v = gaussian(rng, d * n).into_iter().map(|x| scale * x).collect();
    CoefMatrix::from_column_major(d, n, v).unwrap()
}

/// Entries drawn from a small lattice so that ties and exact zeros are common.
pub fn lattice_coef(rng: &mut ChaCha8Rng, d: usize, n: usize) -> CoefMatrix {
    let v = (0..d * n).map(|_| f64::from(rng.random_range(-4i32..=4)) * 0.5).collect();
    CoefMatrix::from_column_major(d, n, v).unwrap()
}

pub fn random_problem(rng: &mut ChaCha8Rng, d: usize, n: usize, rows: usize) -> MultiTaskProblem {
    let blocks: Vec<Array2<f64>> = (0..n).map(|_| Array2::from_shape_vec((rows, d), gaussian(rng, rows * d)).unwrap()).collect();
    let y = gaussian(rng, rows * n);
    MultiTaskProblem::new(blocks, y).unwrap()
}

/// Constraint matrix `B` and right-hand side `c` of the polyhedral
/// description of the ball induced by the sign/argmax pattern of `q`:
/// `-diag(sign q) w <= 0`, every entry's signed value at most its row
/// argmax, and the budget over argmax entries.
pub fn constraint_system(q: &CoefMatrix, gamma: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (d, n) = q.shape();
    let nd = d * n;
    let sgn = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
    // Argmax column per row, first occurrence.
    let lam: Vec<usize> = (0..d)
        .map(|i| {
            let mut best = 0;
            for j in 1..n {
                if q.get(i, j).abs() > q.get(i, best).abs() {
                    best = j;
                }
            }
            best * d + i
        })
        .collect();
    let qv = q.as_slice();
    let mut b = DMatrix::zeros(2 * nd + 1, nd);
    let mut c = DVector::zeros(2 * nd + 1);
    for k in 0..nd {
        b[(k, k)] = -sgn(qv[k]);
        let l = lam[k % d];
        b[(nd + k, k)] += sgn(qv[k]);
        b[(nd + k, l)] -= sgn(qv[l]);
    }
    for &l in &lam {
        b[(2 * nd, l)] = sgn(qv[l]);
    }
    c[2 * nd] = gamma;
    (b, c)
}

/// `I - B_A^T (B_A B_A^T)^+ B_A` over the rows of `B` active at `p`.
pub fn pseudoinverse_jacobian(q: &CoefMatrix, p: &CoefMatrix, gamma: f64) -> DMatrix<f64> {
    let (b, c) = constraint_system(q, gamma);
    let nd = q.as_slice().len();
    let pv = DVector::from_column_slice(p.as_slice());
    let bp = &b * &pv;
    let active: Vec<usize> = (0..b.nrows())
        .filter(|&r| b.row(r).iter().any(|&x| x != 0.0) && approx_eq(bp[r], c[r]))
        .collect();
    if active.is_empty() {
        return DMatrix::identity(nd, nd);
    }
    let ba = DMatrix::from_fn(active.len(), nd, |r, k| b[(active[r], k)]);
    let gram = &ba * ba.transpose();
    let pinv = symmetric_pinv(&gram);
    assert!(max_abs(&(&gram * &pinv * &gram - &gram)) <= 1e-10 * (1.0 + max_abs(&gram)), "pseudoinverse check failed");
    DMatrix::identity(nd, nd) - ba.transpose() * pinv * ba
}

/// Moore-Penrose inverse of a symmetric PSD matrix by eigendecomposition.
pub fn symmetric_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let cut = 1e-10 * eig.eigenvalues.amax().max(1.0);
    let inv = eig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}
