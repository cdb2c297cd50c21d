//! Semismooth Newton method for the proximal augmented Lagrangian subproblem
//!
//! ```text
//! phi(w) = 1/2 ||y - X_J w||^2 - ||u~||^2 / (2 sigma)
//!        + sigma/2 dist^2(w + u~/sigma, C_J) + ||w - w~||^2 / (2 sigma)
//! ```
//!
//! over the reduced coefficient vector `w` (length `t = |J|`). `phi` is
//! strongly convex with a strongly semismooth gradient; Newton directions use
//! the surrogate Hessian `X_J^T X_J + sigma (I - N_J) + I / sigma` with `N_J`
//! the principal submatrix of the projection Jacobian.

use crate::cg::{conjugate_gradient, CgOutcome};
use crate::error::{Error, Result};
use crate::jacobian::{build_jacobian, StructuredProjectionJacobian};
use crate::linalg::{dot, norm};
use crate::model::{CoefMatrix, ReducedDesign};
use crate::projection::{extract_pattern, project, ProjectionResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SsnConfig {
    /// Armijo constant, in `(0, 1/2)`.
    pub rho: f64,
    /// Cap of the CG residual bound, in `(0, 1)`.
    pub nu: f64,
    /// Exponent of the CG residual bound, in `(0, 1]`.
    pub tau: f64,
    /// Backtracking factor, in `(0, 1)`.
    pub varpi: f64,
    pub max_newton: usize,
    pub max_cg: usize,
    pub max_backtrack: usize,
    /// Jacobi preconditioning of the Newton systems.
    pub diag_precond: bool,
}

impl Default for SsnConfig {
    fn default() -> Self {
        Self { rho: 1e-4, nu: 0.1, tau: 0.5, varpi: 0.5, max_newton: 50, max_cg: 300, max_backtrack: 50, diag_precond: false }
    }
}

impl SsnConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.rho < 0.5
            && self.nu > 0.0
            && self.nu < 1.0
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.varpi > 0.0
            && self.varpi < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("semismooth Newton parameters out of range: {self:?}")))
        }
    }
}

/// One instance of the strongly convex inner problem.
#[derive(Debug, Clone)]
pub struct InnerProblem<'d, 'p> {
    design: &'d ReducedDesign<'p>,
    pub gamma: f64,
    pub sigma: f64,
    /// Multiplier restricted to the active set.
    pub u_tilde: Vec<f64>,
    /// Proximal center.
    pub w_tilde: Vec<f64>,
    u_norm_sq: f64,
    grad_scale: f64,
}

impl<'d, 'p> InnerProblem<'d, 'p> {
    pub fn new(design: &'d ReducedDesign<'p>, gamma: f64, sigma: f64, u_tilde: Vec<f64>, w_tilde: Vec<f64>) -> Result<Self> {
        let t = design.t();
        if t == 0 {
            return Err(Error::InvalidInput("inner problem needs a nonempty active set".into()));
        }
        if !(sigma > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma = {sigma} and gamma = {gamma} must be positive")));
        }
        if u_tilde.len() != t || w_tilde.len() != t {
            return Err(Error::DimensionMismatch(format!("inner vectors must have length {t}")));
        }
        let u_norm_sq = dot(&u_tilde, &u_tilde);
        let grad_scale = 1.0 + norm(design.xty()) + u_norm_sq.sqrt() + norm(&w_tilde) / sigma;
        Ok(Self { design, gamma, sigma, u_tilde, w_tilde, u_norm_sq, grad_scale })
    }

    pub fn design(&self) -> &'d ReducedDesign<'p> {
        self.design
    }

    pub fn t(&self) -> usize {
        self.u_tilde.len()
    }

    /// Evaluates `phi`, its gradient and the projection they share.
    pub fn evaluate(&self, w: &[f64]) -> PhiEval {
        let residual = self.design.residual(w);
        self.evaluate_with_residual(w.to_vec(), residual)
    }

    fn evaluate_with_residual(&self, w: Vec<f64>, residual: Vec<f64>) -> PhiEval {
        let sigma = self.sigma;
        let active = self.design.active();
        let v: Vec<f64> = w.iter().zip(&self.u_tilde).map(|(wi, ui)| wi + ui / sigma).collect();
        let shifted = CoefMatrix::scatter(active, &v);
        let projection = project(&shifted, self.gamma);
        let proj_reduced = projection.w.gather(active);
        let excess: Vec<f64> = v.iter().zip(&proj_reduced).map(|(a, b)| a - b).collect();
        let prox: Vec<f64> = w.iter().zip(&self.w_tilde).map(|(a, b)| a - b).collect();

        let value = 0.5 * dot(&residual, &residual) - self.u_norm_sq / (2.0 * sigma)
            + 0.5 * sigma * dot(&excess, &excess)
            + dot(&prox, &prox) / (2.0 * sigma);

        let mut grad = self.design.adjoint(&residual);
        for ((g, e), p) in grad.iter_mut().zip(&excess).zip(&prox) {
            *g += sigma * e + p / sigma;
        }
        let grad_norm = norm(&grad);
        PhiEval { w, value, grad, grad_norm, residual, excess, prox, shifted, projection, proj_reduced }
    }

    /// Generalized Jacobian of the projection at `w + u~/sigma` (extended).
    pub fn jacobian(&self, eval: &PhiEval) -> Result<StructuredProjectionJacobian> {
        let pattern = extract_pattern(&eval.shifted, self.gamma);
        build_jacobian(&eval.shifted, &eval.projection, &pattern)
    }

    /// Rounding level of `||grad phi||` at `eval`; targets below it cannot be verified.
    pub fn gradient_noise(&self, eval: &PhiEval) -> f64 {
        let v_norm = norm(eval.shifted.as_slice());
        4.0 * f64::EPSILON * (self.sigma * v_norm + self.u_norm_sq.sqrt() + norm(self.design.xty()) + norm(&eval.w) / self.sigma)
    }

    fn precond_diag(&self) -> Vec<f64> {
        let mut diag = vec![0.0; self.t()];
        for (range, sub) in self.design.task_blocks() {
            for (c, k) in range.enumerate() {
                diag[k] = sub.column(c).iter().map(|x| x * x).sum();
            }
        }
        let shift = self.sigma + 1.0 / self.sigma;
        diag.iter_mut().for_each(|x| *x += shift);
        diag
    }
}

/// Everything computed at one point of the inner problem.
#[derive(Debug, Clone)]
pub struct PhiEval {
    pub w: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    residual: Vec<f64>,
    excess: Vec<f64>,
    prox: Vec<f64>,
    /// `w + u~/sigma` zero-extended to the full matrix.
    pub shifted: CoefMatrix,
    pub projection: ProjectionResult,
    /// The projection restricted to the active set, i.e. `z` for this `w`.
    pub proj_reduced: Vec<f64>,
}

pub fn phi_value(p: &InnerProblem<'_, '_>, w: &[f64]) -> f64 {
    p.evaluate(w).value
}

pub fn phi_grad(p: &InnerProblem<'_, '_>, w: &[f64]) -> Vec<f64> {
    p.evaluate(w).grad
}

/// `M h = X_J^T X_J h + sigma (h - N_J h) + h / sigma`
pub fn hessian_apply(p: &InnerProblem<'_, '_>, jac: &StructuredProjectionJacobian, h: &[f64]) -> Result<Vec<f64>> {
    let nh = jac.apply_reduced(p.design.active(), h)?;
    let mut out = p.design.gram_apply(h);
    let s = p.sigma;
    for ((o, hi), ni) in out.iter_mut().zip(h).zip(&nh) {
        *o += s * (hi - ni) + hi / s;
    }
    Ok(out)
}

/// Newton direction: CG on `M h = -g` until `||M h + g|| <= min(nu, ||g||^(1+tau))`.
pub fn cg_solve<F>(apply: F, g: &[f64], config: &SsnConfig, precond: Option<&[f64]>) -> CgOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let gnorm = norm(g);
    let tol = config.nu.min(gnorm.powf(1.0 + config.tau));
    let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
    conjugate_gradient(apply, &rhs, None, tol, config.max_cg, precond)
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub backtracks: usize,
    /// `phi(w + alpha h) - phi(w)`, accumulated without cancellation.
    pub decrease: f64,
    /// Accepted on gradient decrease because the change in `phi` was below
    /// its evaluation noise.
    pub noise_limited: bool,
    pub eval: PhiEval,
}

/// Armijo backtracking along `h` from `eval`.
///
/// The change in `phi` is computed term by term from `X_J h` so that it stays
/// accurate when the step is tiny relative to `phi` itself. Rounding of
/// `w + u~/sigma` still limits that accuracy to about
/// `eps sigma ||e|| ||w + u~/sigma||`; a step whose Armijo decrease is below
/// this level is accepted instead if it reduces `||grad phi||`.
pub fn line_search(p: &InnerProblem<'_, '_>, eval: &PhiEval, h: &[f64], config: &SsnConfig) -> Result<LineSearchOutcome> {
    let slope = dot(&eval.grad, h);
    if !(slope < 0.0) {
        return Err(Error::LineSearch { steps: 0, slope });
    }
    let xh = p.design.apply(h);
    let r_xh = dot(&eval.residual, &xh);
    let xh_sq = dot(&xh, &xh);
    let prox_h = dot(&eval.prox, h);
    let h_sq = dot(h, h);
    let sigma = p.sigma;
    let noise = 8.0 * f64::EPSILON * sigma * norm(&eval.excess) * (norm(eval.shifted.as_slice()) + h_sq.sqrt());

    let mut alpha = 1.0;
    for iota in 0..=config.max_backtrack {
        let w_new: Vec<f64> = eval.w.iter().zip(h).map(|(w, hi)| w + alpha * hi).collect();
        let r_new: Vec<f64> = eval.residual.iter().zip(&xh).map(|(r, x)| r + alpha * x).collect();
        let cand = p.evaluate_with_residual(w_new, r_new);
        let dist_change: f64 = cand.excess.iter().zip(&eval.excess).map(|(a, b)| (a - b) * (a + b)).sum();
        let decrease = alpha * r_xh
            + 0.5 * alpha * alpha * xh_sq
            + 0.5 * sigma * dist_change
            + (alpha * prox_h + 0.5 * alpha * alpha * h_sq) / sigma;
        let slack = 16.0 * f64::EPSILON * alpha * (r_xh.abs() + sigma * norm(&eval.excess) * h_sq.sqrt() + prox_h.abs() / sigma);
        let armijo = decrease <= config.rho * alpha * slope + slack;
        let noise_limited = !armijo && alpha * slope.abs() <= noise && cand.grad_norm < eval.grad_norm;
        if armijo || noise_limited {
            // refresh the residual so rounding does not accumulate across steps
            let fresh = p.evaluate(&cand.w);
            return Ok(LineSearchOutcome { alpha, backtracks: iota, decrease, noise_limited, eval: fresh });
        }
        alpha *= config.varpi;
    }
    Err(Error::LineSearch { steps: config.max_backtrack, slope })
}

#[derive(Debug, Clone, Default)]
pub struct SsnStats {
    pub iterations: usize,
    pub cg_iterations: usize,
    /// `||grad phi||` at every iterate, starting point included.
    pub grad_norms: Vec<f64>,
    pub values: Vec<f64>,
    pub converged: bool,
    /// Stopped at the rounding level of the gradient, above the requested tolerance.
    pub stalled: bool,
    pub cg_capped: usize,
    /// Steps accepted by the gradient test in the noise-limited regime.
    pub noise_limited_steps: usize,
}

/// Runs semismooth Newton from `w0` until `||grad phi|| <= grad_tol`.
pub fn ssn_solve(p: &InnerProblem<'_, '_>, w0: &[f64], config: &SsnConfig, grad_tol: f64) -> Result<(PhiEval, SsnStats)> {
    config.validate()?;
    if w0.len() != p.t() {
        return Err(Error::DimensionMismatch(format!("start has length {}, expected {}", w0.len(), p.t())));
    }
    let precond = config.diag_precond.then(|| p.precond_diag());
    let mut stats = SsnStats::default();
    let mut eval = p.evaluate(w0);
    loop {
        stats.grad_norms.push(eval.grad_norm);
        stats.values.push(eval.value);
        if eval.grad_norm <= grad_tol {
            stats.converged = true;
            break;
        }
        if eval.grad_norm <= p.gradient_noise(&eval) {
            stats.stalled = true;
            break;
        }
        if stats.iterations >= config.max_newton {
            break;
        }
        let jac = p.jacobian(&eval)?;
        let cg = cg_solve(
            |h| hessian_apply(p, &jac, h).expect("active set matches the Jacobian"),
            &eval.grad,
            config,
            precond.as_deref(),
        );
        stats.cg_iterations += cg.iterations;
        if !cg.converged {
            stats.cg_capped += 1;
        }
        match line_search(p, &eval, &cg.x, config) {
            Ok(ls) => {
                stats.noise_limited_steps += usize::from(ls.noise_limited);
                eval = ls.eval;
            }
            Err(e) => {
                if eval.grad_norm <= 1e-8 * p.grad_scale {
                    stats.stalled = true;
                    break;
                }
                return Err(e);
            }
        }
        stats.iterations += 1;
    }
    Ok((eval, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActiveIndexSet, MultiTaskProblem};
    use ndarray::array;

    fn scalar_problem() -> MultiTaskProblem {
        MultiTaskProblem::new(vec![array![[1.0]]], vec![1.0]).unwrap()
    }

    #[test]
    fn scalar_value_and_gradient() {
        let prob = scalar_problem();
        let design = ReducedDesign::full(&prob);
        let p = InnerProblem::new(&design, 10.0, 1.0, vec![0.0], vec![0.0]).unwrap();
        assert_eq!(phi_value(&p, &[0.0]), 0.5);
        // interior: phi(w) = (1-w)^2/2 + w^2/2, phi'(w) = 2w - 1
        assert!((phi_grad(&p, &[0.25])[0] + 0.5).abs() < 1e-15);
        assert!((phi_grad(&p, &[0.5])[0]).abs() < 1e-15);
    }

    #[test]
    fn scalar_newton_converges() {
        let prob = scalar_problem();
        let design = ReducedDesign::full(&prob);
        let p = InnerProblem::new(&design, 10.0, 1.0, vec![0.0], vec![0.0]).unwrap();
        let (eval, stats) = ssn_solve(&p, &[0.0], &SsnConfig::default(), 1e-12).unwrap();
        assert!(stats.converged);
        assert!(stats.iterations <= 2);
        assert!((eval.w[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn start_at_minimizer_takes_no_steps() {
        let prob = scalar_problem();
        let design = ReducedDesign::full(&prob);
        let p = InnerProblem::new(&design, 10.0, 1.0, vec![0.0], vec![0.0]).unwrap();
        let (_, stats) = ssn_solve(&p, &[0.5], &SsnConfig::default(), 1e-12).unwrap();
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn feasible_center_value() {
        let prob = MultiTaskProblem::new(vec![array![[1.0, 2.0], [0.5, -1.0]]], vec![1.0, 0.0]).unwrap();
        let design = ReducedDesign::full(&prob);
        let w = vec![0.1, -0.2];
        let p = InnerProblem::new(&design, 1.0, 3.0, vec![0.0, 0.0], w.clone()).unwrap();
        let r = design.residual(&w);
        assert!((phi_value(&p, &w) - 0.5 * dot(&r, &r)).abs() < 1e-15);
    }

    #[test]
    fn newton_step_on_quadratic_is_accepted() {
        let prob = scalar_problem();
        let design = ReducedDesign::full(&prob);
        let p = InnerProblem::new(&design, 10.0, 1.0, vec![0.0], vec![0.0]).unwrap();
        let cfg = SsnConfig::default();
        let eval = p.evaluate(&[0.0]);
        let ls = line_search(&p, &eval, &[0.5], &cfg).unwrap();
        assert_eq!(ls.backtracks, 0);
        assert_eq!(ls.alpha, 1.0);
        let ls = line_search(&p, &eval, &[50.0], &cfg).unwrap();
        assert!(ls.backtracks > 0);
        assert!(ls.decrease <= cfg.rho * ls.alpha * (-50.0));
        assert!(line_search(&p, &eval, &[-1.0], &cfg).is_err());
    }

    #[test]
    fn bad_parameters_rejected() {
        let cfg = SsnConfig { rho: 0.6, ..SsnConfig::default() };
        assert!(cfg.validate().is_err());
        let prob = scalar_problem();
        let design = ReducedDesign::new(&prob, ActiveIndexSet::new(1, 1, vec![]).unwrap()).unwrap();
        assert!(InnerProblem::new(&design, 1.0, 1.0, vec![], vec![]).is_err());
    }
}
