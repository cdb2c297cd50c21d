mod common;

use mtlasso::jacobian::{build_jacobian, StructuredProjectionJacobian};
use mtlasso::model::{ActiveIndexSet, CoefMatrix};
use mtlasso::projection::{extract_pattern, project};
use mtlasso::Error;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn jacobian(q: &CoefMatrix, gamma: f64) -> mtlasso::Result<(StructuredProjectionJacobian, CoefMatrix)> {
    let p = project(q, gamma);
    let j = build_jacobian(q, &p, &extract_pattern(q, gamma))?;
    Ok((j, p.w))
}

#[test]
fn hand_worked_case_is_zero() {
    let q = CoefMatrix::from_rows(&[vec![2.0, 1.0]]).unwrap();
    let (j, p) = jacobian(&q, 1.0).unwrap();
    assert_eq!(j.to_dense(), DMatrix::zeros(2, 2));
    assert!(common::max_abs(&common::pseudoinverse_jacobian(&q, &p, 1.0)) < 1e-14);
}

/// Lattice entries make zeros and ties frequent; Gaussian entries cover the
/// generic case.
#[test]
fn matches_pseudoinverse_formula() {
    let mut rng = common::rng(11);
    let mut degenerate = 0;
    for trial in 0..300 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(1..=5);
        let q = if trial % 2 == 0 { common::lattice_coef(&mut rng, d, n) } else { common::random_coef(&mut rng, d, n, 2.0) };
        let gamma = [0.1, 0.5, 1.0, 3.0][trial % 4];
        let (j, p) = match jacobian(&q, gamma) {
            Ok(v) => v,
            Err(Error::DegeneratePattern { .. }) => {
                degenerate += 1;
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        let dense = j.to_dense();
        let oracle = common::pseudoinverse_jacobian(&q, &p, gamma);
        let err = common::max_abs(&(&dense - &oracle));
        assert!(err <= 1e-8, "trial {trial}: q = {q:?}, gamma = {gamma}, error {err}\n{dense}\n{oracle}");
    }
    assert!(degenerate <= 30, "{degenerate} degenerate patterns");
}

#[test]
fn orthogonal_projector() {
    let mut rng = common::rng(12);
    for trial in 0..200 {
        let (d, n) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let q = if trial % 2 == 0 { common::lattice_coef(&mut rng, d, n) } else { common::random_coef(&mut rng, d, n, 2.0) };
        let Ok((j, _)) = jacobian(&q, 1.0) else { continue };
        let m = j.to_dense();
        assert!(common::max_abs(&(&m - m.transpose())) <= 1e-14);
        assert!((&m * &m - &m).norm() <= 1e-10);
        let eig = m.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&l| (-1e-10..=1.0 + 1e-10).contains(&l)), "{eig}");
    }
}

#[test]
fn matrix_free_matches_dense() {
    let mut rng = common::rng(13);
    for _ in 0..50 {
        let (d, n) = (rng.random_range(2..=10), rng.random_range(2..=8));
        let q = common::random_coef(&mut rng, d, n, 1.0);
        let (j, _) = jacobian(&q, 0.5).unwrap();
        let dense = j.to_dense();
        let v = common::gaussian(&mut rng, d * n);
        let want = &dense * DVector::from_column_slice(&v);
        let got = j.apply(&v);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let idx: Vec<usize> = (0..d * n).filter(|_| rng.random_bool(0.4)).collect();
        let active = ActiveIndexSet::new(d, n, idx.clone()).unwrap();
        let vr = common::gaussian(&mut rng, idx.len());
        let got = j.apply_reduced(&active, &vr).unwrap();
        for (r, &k) in idx.iter().enumerate() {
            let want: f64 = idx.iter().zip(&vr).map(|(&c, x)| dense[(k, c)] * x).sum();
            assert!((got[r] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

/// At points where the sign/argmax/clamp pattern is locally constant the
/// projection is affine, so central differences recover `N0 h`.
#[test]
fn finite_differences_at_stable_points() {
    let mut rng = common::rng(14);
    let mut checked = 0;
    while checked < 60 {
        let (d, n) = (rng.random_range(1..=6), rng.random_range(1..=5));
        let q = common::random_coef(&mut rng, d, n, 2.0);
        let gamma = 1.0;
        let Ok((j, _)) = jacobian(&q, gamma) else { continue };
        let base = j.to_dense();
        let stable = (0..4).all(|_| {
            let h = common::gaussian(&mut rng, d * n);
            let qp = CoefMatrix::from_column_major(d, n, q.as_slice().iter().zip(&h).map(|(a, b)| a + 1e-7 * b).collect()).unwrap();
            jacobian(&qp, gamma).map(|(jp, _)| common::max_abs(&(jp.to_dense() - &base)) < 1e-9).unwrap_or(false)
        });
        if !stable {
            continue;
        }
        let eps = 1e-6 * (1.0 + q.frobenius_norm());
        for _ in 0..10 {
            let h = common::gaussian(&mut rng, d * n);
            let shift = |s: f64| CoefMatrix::from_column_major(d, n, q.as_slice().iter().zip(&h).map(|(a, b)| a + s * b).collect()).unwrap();
            let (pp, pm) = (project(&shift(eps), gamma).w, project(&shift(-eps), gamma).w);
            let jh = j.apply(&h);
            for ((a, b), jk) in pp.as_slice().iter().zip(pm.as_slice()).zip(&jh) {
                let fd = (a - b) / (2.0 * eps);
                assert!((fd - jk).abs() <= 1e-5, "fd {fd} vs {jk}");
            }
        }
        checked += 1;
    }
}
