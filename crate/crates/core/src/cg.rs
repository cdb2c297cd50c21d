//! Conjugate gradients for symmetric positive definite operators.

use crate::linalg::{axpy, dot, norm};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `A x = rhs` from `x0` until `||A x - rhs|| <= tol`.
///
/// `precond`, when given, is the diagonal of a Jacobi preconditioner.
pub fn conjugate_gradient<F>(apply: F, rhs: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize, precond: Option<&[f64]>) -> CgOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r: Vec<f64> = match x0 {
        Some(_) => {
            let ax = apply(&x);
            rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
        }
        None => rhs.to_vec(),
    };
    let mut rnorm = norm(&r);
    if rnorm <= tol {
        return CgOutcome { x, residual_norm: rnorm, iterations: 0, converged: true };
    }
    let precondition = |r: &[f64]| -> Vec<f64> {
        match precond {
            Some(p) => r.iter().zip(p).map(|(ri, pi)| ri / pi).collect(),
            None => r.to_vec(),
        }
    };
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // not positive definite along p; keep the current iterate
            return CgOutcome { x, residual_norm: rnorm, iterations: it - 1, converged: false };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rnorm = norm(&r);
        if rnorm <= tol {
            return CgOutcome { x, residual_norm: rnorm, iterations: it, converged: true };
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome { x, residual_norm: rnorm, iterations: max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_one_step() {
        let out = conjugate_gradient(|v| v.to_vec(), &[1.0, -2.0, 3.0], None, 1e-14, 10, None);
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn small_spd_system() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let apply = |v: &[f64]| vec![a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]];
        let out = conjugate_gradient(apply, &[1.0, 2.0], None, 1e-12, 10, Some(&[4.0, 3.0]));
        assert!(out.converged);
        assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs() {
        let out = conjugate_gradient(|v| v.to_vec(), &[0.0; 4], None, 0.0, 10, None);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0; 4]);
    }
}
