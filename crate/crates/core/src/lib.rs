//! Multi-task Lasso under an l1,inf-ball constraint.
//!
//! Solvers: adaptive sieving around a semismooth Newton proximal augmented
//! Lagrangian method (`as-ssnpal`), the same method in full space (`ssnpal`),
//! and ADMM with and without sieving (`as-admm`, `admm`).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod bench;
pub mod cg;
pub mod error;
pub mod io;
pub mod jacobian;
pub mod linalg;
pub mod model;
pub mod pal;
pub mod projection;
pub mod sieving;
pub mod ssn;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{ActiveIndexSet, CoefMatrix, MultiTaskProblem, ResidualReport};
pub use pal::{SolveOutcome, SolveStatus, Triple};
pub use projection::{project, ProjectionResult};
