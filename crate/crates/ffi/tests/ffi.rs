use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mtlasso_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        mtl_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

/// Two tasks, two features, identity-like designs.
fn tiny_problem() -> *mut MtlProblem {
    let sizes = [2usize, 2];
    let x = [1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0];
    let y = [1.0, -1.0, 2.0, 0.5];
    let mut p = ptr::null_mut();
    let st = unsafe { mtl_problem_new(2, 2, sizes.as_ptr(), x.as_ptr(), y.as_ptr(), &mut p) };
    assert_eq!(st, MtlStatus::Ok, "{}", last_error());
    p
}

#[test]
fn problem_dims_and_free() {
    let p = tiny_problem();
    let (mut d, mut n, mut m) = (0, 0, 0);
    unsafe {
        assert_eq!(mtl_problem_dims(p, &mut d, &mut n, &mut m), MtlStatus::Ok);
        mtl_problem_free(p);
        mtl_problem_free(ptr::null_mut());
    }
    assert_eq!((d, n, m), (2, 2, 4));
}

#[test]
fn null_and_bad_inputs_report_errors() {
    let mut p = ptr::null_mut();
    let st = unsafe { mtl_problem_new(2, 1, ptr::null(), ptr::null(), ptr::null(), &mut p) };
    assert_eq!(st, MtlStatus::NullPointer);
    assert!(p.is_null());
    assert!(last_error().contains("null"));

    let sizes = [0usize];
    let x = [0.0; 2];
    let st = unsafe { mtl_problem_new(2, 1, sizes.as_ptr(), x.as_ptr(), x.as_ptr(), &mut p) };
    assert_ne!(st, MtlStatus::Ok);
    assert!(!last_error().is_empty());

    let p = tiny_problem();
    let mut s = ptr::null_mut();
    let st = unsafe { mtl_solve(p, 17, 1.0, 1e-6, ptr::null(), &mut s) };
    assert_eq!(st, MtlStatus::InvalidInput);
    assert!(s.is_null());
    assert!(last_error().contains("17"));
    let st = unsafe { mtl_solve(p, MTL_SOLVER_SSNPAL, -1.0, 1e-6, ptr::null(), &mut s) };
    assert_eq!(st, MtlStatus::InvalidInput, "{}", last_error());
    unsafe { mtl_problem_free(p) };
}

#[test]
fn truncated_error_message() {
    assert_eq!(unsafe { mtl_problem_synthetic(1, 0, ptr::null_mut()) }, MtlStatus::NullPointer);
    let full = unsafe { mtl_last_error(ptr::null_mut(), 0) };
    assert!(full > 4);
    let mut buf = [1 as std::ffi::c_char; 4];
    let n = unsafe { mtl_last_error(buf.as_mut_ptr(), 4) };
    assert_eq!(n, full);
    assert_eq!(buf[3], 0);
}

#[test]
fn projection_matches_scaled_row() {
    // Single row (3, -4): projection onto radius 2 clamps to 2 on the l-inf row.
    let q = [3.0, -4.0];
    let mut out = [0.0; 2];
    let mut theta = 0.0;
    let st = unsafe { mtl_project(q.as_ptr(), 1, 2, 2.0, out.as_mut_ptr(), &mut theta) };
    assert_eq!(st, MtlStatus::Ok);
    assert_eq!(out, [2.0, -2.0]);
    assert!((theta - 3.0).abs() < 1e-12);

    let mut inplace = [0.5, 0.25];
    let st = unsafe { mtl_project(inplace.as_ptr(), 2, 1, 10.0, inplace.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, MtlStatus::Ok);
    assert_eq!(inplace, [0.5, 0.25]);
}

#[test]
fn solve_and_read_back() {
    let p = tiny_problem();
    for solver in [MTL_SOLVER_AS_SSNPAL, MTL_SOLVER_SSNPAL, MTL_SOLVER_AS_ADMM, MTL_SOLVER_ADMM] {
        let mut s = ptr::null_mut();
        let st = unsafe { mtl_solve(p, solver, 0.5, 1e-8, ptr::null(), &mut s) };
        assert_eq!(st, MtlStatus::Ok, "{}", last_error());
        unsafe {
            assert_eq!(mtl_solution_status(s), MtlSolveStatus::Converged);
            assert!(mtl_solution_residual(s) <= 1e-8);
            let mut w = [0.0; 4];
            assert_eq!(mtl_solution_matrix(s, 0, w.as_mut_ptr(), 4), MtlStatus::Ok);
            let l1inf: f64 = (0..2).map(|i| w[i].abs().max(w[2 + i].abs())).sum();
            assert!(l1inf <= 0.5 + 1e-6, "solver {solver}: {l1inf}");
            assert_eq!(mtl_solution_matrix(s, 0, w.as_mut_ptr(), 3), MtlStatus::DimensionMismatch);
            assert_eq!(mtl_solution_matrix(s, 5, w.as_mut_ptr(), 4), MtlStatus::InvalidInput);
            let mut active = 0;
            assert_eq!(mtl_solution_stats(s, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), &mut active, ptr::null_mut()), MtlStatus::Ok);
            assert!((1..=4).contains(&active));
            mtl_solution_free(s);
        }
    }
    unsafe { mtl_problem_free(p) };
}

#[test]
fn path_fills_every_slot() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { mtl_problem_synthetic(1, 5, &mut p) }, MtlStatus::Ok);
    let gammas = [0.01, 0.03, 0.05];
    let mut out = [ptr::null_mut(); 3];
    let opts = MtlOptions { max_iter: 0, time_limit_s: 600.0, eps: 0.0 };
    let st = unsafe { mtl_path(p, MTL_SOLVER_AS_SSNPAL, gammas.as_ptr(), 3, 1e-6, &opts, out.as_mut_ptr()) };
    assert_eq!(st, MtlStatus::Ok, "{}", last_error());
    for s in out {
        assert!(!s.is_null());
        unsafe {
            assert_eq!(mtl_solution_status(s), MtlSolveStatus::Converged);
            mtl_solution_free(s);
        }
    }
    let bad = [0.05, 0.01];
    let st = unsafe { mtl_path(p, MTL_SOLVER_ADMM, bad.as_ptr(), 2, 1e-6, ptr::null(), out.as_mut_ptr()) };
    assert_eq!(st, MtlStatus::InvalidInput);
    assert!(out[..2].iter().all(|s| s.is_null()));
    unsafe { mtl_problem_free(p) };
}

/// Compiles a C program against the generated header and the shared library.
#[test]
fn c_program_links_against_header() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let libdir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    assert!(libdir.join("libmtlasso_ffi.so").exists() || libdir.join("libmtlasso_ffi.dylib").exists(), "{libdir:?}");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "mtlasso.h"
int main(void) {
    double q[4] = {3.0, 1.0, -4.0, 0.5};
    double w[4];
    double theta = 0.0;
    if (mtl_project(q, 2, 2, 2.0, w, &theta) != MTL_STATUS_OK) return 1;
    MtlProblem *p = NULL;
    if (mtl_problem_synthetic(1, 3, &p) != MTL_STATUS_OK) return 2;
    MtlOptions opts = {0, 600.0, 0.0};
    MtlSolution *s = NULL;
    if (mtl_solve(p, MTL_SOLVER_AS_SSNPAL, 0.03, 1e-6, &opts, &s) != MTL_STATUS_OK) return 3;
    int ok = mtl_solution_status(s) == MTL_SOLVE_STATUS_CONVERGED;
    printf("%.6f %.3e %d\n", theta, mtl_solution_residual(s), ok);
    mtl_solution_free(s);
    mtl_problem_free(p);
    return ok ? 0 : 4;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&libdir)
        .arg("-lmtlasso_ffi")
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .arg("-o")
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "exit {:?}: {stdout}", run.status.code());
    assert!(stdout.ends_with(" 1\n"), "{stdout}");
}
