//! Smooth finite-dimensional constrained optimizer.
//!
//! Augmented-Lagrangian outer loop over inequality constraints with a
//! projected quasi-Newton bound-constrained inner solver. Strictly local;
//! multistart is the caller's job.

mod lbfgs;

use std::sync::Arc;

use thiserror::Error;

use lbfgs::{minimize_box, InnerStatus};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Jacobian as row-major `m x n`: element `[i * n + j] = d g_i / d x_j`.
pub type JacobianFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Error, Debug)]
pub enum NlpError {
    #[error("objective is non-finite at the initial point")]
    NonFiniteInitial,
    #[error("initial point contains non-finite entries")]
    NonFiniteInput,
    #[error("perturbed evaluation was non-finite at coordinate {coordinate}")]
    NonFinitePerturbation { coordinate: usize },
    #[error("analytic gradient disagrees with finite differences at coordinate {coordinate}: analytic {analytic}, fd {fd}")]
    GradientMismatch { coordinate: usize, analytic: f64, fd: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Inequality block `g(x) <= 0` with optional analytic Jacobian.
#[derive(Clone)]
pub struct Inequality {
    pub m: usize,
    pub eval: VectorFn,
    pub jacobian: Option<JacobianFn>,
}

/// A smooth box- and inequality-constrained problem.
#[derive(Clone)]
pub struct NlpProblem {
    pub n: usize,
    pub objective: ScalarFn,
    pub objective_grad: Option<VectorFn>,
    pub inequality: Option<Inequality>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
}

impl NlpProblem {
    pub fn new(n: usize, objective: ScalarFn) -> Self {
        Self {
            n,
            objective,
            objective_grad: None,
            inequality: None,
            box_lower: vec![f64::NEG_INFINITY; n],
            box_upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.n);
        assert_eq!(upper.len(), self.n);
        self.box_lower = lower;
        self.box_upper = upper;
        self
    }

    pub fn with_objective_grad(mut self, grad: VectorFn) -> Self {
        self.objective_grad = Some(grad);
        self
    }

    pub fn with_inequality(mut self, m: usize, eval: VectorFn) -> Self {
        self.inequality = Some(Inequality { m, eval, jacobian: None });
        self
    }

    pub fn with_inequality_jacobian(mut self, jacobian: JacobianFn) -> Self {
        if let Some(ineq) = &mut self.inequality {
            ineq.jacobian = Some(jacobian);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlpStatus {
    Converged,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// `max(0, max_i g_i(x))`; zero for box-only problems.
    pub constraint_violation: f64,
    pub status: NlpStatus,
    /// Multiplier estimates for the inequality block (empty if none).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct NlpOptions {
    /// KKT tolerance.
    pub tolerance: f64,
    /// Outer augmented-Lagrangian iterations.
    pub max_outer_iterations: usize,
    /// Iteration cap for each inner bound-constrained solve.
    pub max_inner_iterations: usize,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub multiplier_bound: f64,
    /// When set, analytic gradients are compared against central finite
    /// differences at the initial point before the solve starts.
    pub gradient_check: bool,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_outer_iterations: 200,
            max_inner_iterations: 600,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e12,
            multiplier_bound: 1e12,
            gradient_check: false,
        }
    }
}

/// Central finite-difference gradient with step `h_i = max(1e-6, 1e-7 |x_i|)`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64]) -> Result<Vec<f64>, NlpError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = (1e-7 * x[i].abs()).max(1e-6);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(NlpError::NonFinitePerturbation { coordinate: i });
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Compare an analytic gradient against central finite differences at `x`.
pub fn check_gradient<F, G>(f: F, grad: G, x: &[f64], rel_tol: f64) -> Result<(), NlpError>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = grad(x);
    let fd = finite_difference_gradient(&f, x)?;
    let scale = 1.0 + fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..x.len() {
        if (analytic[i] - fd[i]).abs() > rel_tol * scale {
            return Err(NlpError::GradientMismatch { coordinate: i, analytic: analytic[i], fd: fd[i] });
        }
    }
    Ok(())
}

fn objective_gradient(problem: &NlpProblem, x: &[f64]) -> Vec<f64> {
    match &problem.objective_grad {
        Some(g) => g(x),
        None => finite_difference_gradient(|p| (problem.objective)(p), x)
            .unwrap_or_else(|_| vec![f64::NAN; x.len()]),
    }
}

/// Minimize an [`NlpProblem`] from `x_init`.
pub fn minimize(problem: &NlpProblem, x_init: &[f64], options: &NlpOptions) -> Result<NlpResult, NlpError> {
    if x_init.len() != problem.n {
        return Err(NlpError::DimensionMismatch { expected: problem.n, actual: x_init.len() });
    }
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(NlpError::NonFiniteInput);
    }
    if !(problem.objective)(x_init).is_finite() {
        return Err(NlpError::NonFiniteInitial);
    }
    if options.gradient_check {
        if let Some(grad) = &problem.objective_grad {
            check_gradient(|p| (problem.objective)(p), |p| grad(p), x_init, 1e-5)?;
        }
    }

    match &problem.inequality {
        None => Ok(solve_box_only(problem, x_init, options)),
        Some(ineq) => Ok(solve_augmented(problem, ineq.clone(), x_init, options)),
    }
}

/// Maximize by negating the objective; the reported objective value is the
/// maximized (un-negated) one.
pub fn maximize(problem: &NlpProblem, x_init: &[f64], options: &NlpOptions) -> Result<NlpResult, NlpError> {
    let obj = problem.objective.clone();
    let negated_grad = problem.objective_grad.clone().map(|g| {
        let g2: VectorFn = Arc::new(move |x: &[f64]| g(x).into_iter().map(|v| -v).collect());
        g2
    });
    let negated = NlpProblem {
        n: problem.n,
        objective: Arc::new(move |x: &[f64]| -obj(x)),
        objective_grad: negated_grad,
        inequality: problem.inequality.clone(),
        box_lower: problem.box_lower.clone(),
        box_upper: problem.box_upper.clone(),
    };
    let mut result = minimize(&negated, x_init, options)?;
    result.objective = -result.objective;
    Ok(result)
}

fn solve_box_only(problem: &NlpProblem, x_init: &[f64], options: &NlpOptions) -> NlpResult {
    let f = |x: &[f64]| (problem.objective)(x);
    let g = |x: &[f64]| objective_gradient(problem, x);
    let inner = minimize_box(
        f,
        g,
        &problem.box_lower,
        &problem.box_upper,
        x_init,
        options.tolerance,
        options.max_inner_iterations,
    );
    NlpResult {
        objective: inner.objective,
        kkt_residual: inner.kkt_residual,
        constraint_violation: 0.0,
        status: map_status(inner.status),
        multipliers: vec![],
        iterations: inner.iterations,
        x: inner.x,
    }
}

fn map_status(s: InnerStatus) -> NlpStatus {
    match s {
        InnerStatus::Converged => NlpStatus::Converged,
        InnerStatus::MaxIterations => NlpStatus::MaxIterations,
        InnerStatus::LineSearchFailure => NlpStatus::LineSearchFailure,
    }
}

fn violation(g: &[f64]) -> f64 {
    g.iter().copied().fold(0.0, f64::max)
}

fn solve_augmented(
    problem: &NlpProblem,
    ineq: Inequality,
    x_init: &[f64],
    options: &NlpOptions,
) -> NlpResult {
    let m = ineq.m;
    let mut lambda = vec![0.0f64; m];
    let mut rho = options.initial_penalty;
    let mut x = x_init.to_vec();
    let mut prev_violation = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut last = None;

    for outer in 0..options.max_outer_iterations {
        let lam = lambda.clone();
        let al = {
            let obj = problem.objective.clone();
            let cons = ineq.eval.clone();
            let lam = lam.clone();
            move |x: &[f64]| {
                let mut v = obj(x);
                let g = cons(x);
                for i in 0..m {
                    let t = (lam[i] + rho * g[i]).max(0.0);
                    v += (t * t - lam[i] * lam[i]) / (2.0 * rho);
                }
                v
            }
        };
        let al_grad = |x: &[f64]| -> Vec<f64> {
            match (&problem.objective_grad, &ineq.jacobian) {
                (Some(og), Some(jac)) => {
                    let mut grad = og(x);
                    let g = (ineq.eval)(x);
                    let j = jac(x);
                    for i in 0..m {
                        let t = (lam[i] + rho * g[i]).max(0.0);
                        if t > 0.0 {
                            for k in 0..problem.n {
                                grad[k] += t * j[i * problem.n + k];
                            }
                        }
                    }
                    grad
                }
                _ => finite_difference_gradient(&al, x).unwrap_or_else(|_| vec![f64::NAN; problem.n]),
            }
        };

        // loose inner tolerance early on, tightening towards the KKT target
        let inner_tol = (options.tolerance).max(1e-3 * 0.1f64.powi(outer as i32));
        let inner = minimize_box(
            &al,
            al_grad,
            &problem.box_lower,
            &problem.box_upper,
            &x,
            inner_tol,
            options.max_inner_iterations,
        );
        x = inner.x.clone();
        let g = (ineq.eval)(&x);
        let viol = violation(&g).max(0.0);
        log::debug!(
            "al outer {outer}: rho {rho:.1e} inner {:?} after {} iters, kkt {:.3e} viol {:.3e} f {:.6e}",
            inner.status,
            inner.iterations,
            inner.kkt_residual,
            viol,
            (problem.objective)(&x)
        );

        for i in 0..m {
            lambda[i] = (lambda[i] + rho * g[i]).clamp(0.0, options.multiplier_bound);
        }

        let result = NlpResult {
            objective: (problem.objective)(&x),
            kkt_residual: inner.kkt_residual,
            constraint_violation: viol,
            status: NlpStatus::MaxIterations,
            multipliers: lambda.clone(),
            iterations: outer + 1,
            x: x.clone(),
        };

        if viol <= options.tolerance && inner.kkt_residual <= options.tolerance {
            return NlpResult { status: NlpStatus::Converged, ..result };
        }

        if viol > 0.25 * prev_violation {
            rho = (rho * options.penalty_growth).min(options.penalty_max);
        }
        if viol >= prev_violation - options.tolerance {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        prev_violation = prev_violation.min(viol);
        // an inner line-search failure means the subproblem was solved to
        // its numerical floor; the multiplier/penalty updates above may
        // still make progress, so only give up once the violation stalls
        let failed = inner.status == InnerStatus::LineSearchFailure;
        let result = if failed {
            NlpResult { status: NlpStatus::LineSearchFailure, ..result }
        } else {
            result
        };
        last = Some(result);
        if stagnant >= 4 || (rho >= options.penalty_max && stagnant >= 3) {
            break; // no progress left in the schedule
        }
    }

    last.unwrap_or_else(|| {
        let g = (ineq.eval)(&x);
        NlpResult {
            objective: (problem.objective)(&x),
            kkt_residual: f64::INFINITY,
            constraint_violation: violation(&g).max(0.0),
            status: NlpStatus::MaxIterations,
            multipliers: lambda,
            iterations: 0,
            x,
        }
    })
}
