//! ℓ1-penalized and ℓ1-constrained least squares, plus the pseudo-inverse path.
//!
//! Both iterative solvers are accelerated proximal-gradient methods with a
//! fixed step `1/L`, `L = ‖A‖₂²`, and the monotone safeguard of Beck and
//! Teboulle: a candidate is only accepted when it does not increase the
//! objective, so the reported objective history is non-increasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Relative singular-value cutoff used by the pseudo-inverse path.
pub const PINV_RCOND: f64 = 1e-12;

/// How a coefficient vector is regularized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LassoMode {
    /// `½‖Ac − b‖² + λ‖c‖₁`
    Penalized { lambda: f64 },
    /// `‖Ac − b‖₂` subject to `‖c‖₁ ≤ τ`
    Constrained { tau: f64 },
    /// Minimum-norm least squares.
    PseudoInverse,
}

#[derive(Debug, Clone)]
pub struct LassoProblem {
    design: Matrix,
    target: Vector,
    mode: LassoMode,
}

impl LassoProblem {
    pub fn new(design: Matrix, target: Vector, mode: LassoMode) -> Result<Self> {
        if design.nrows() != target.len() {
            return Err(Error::dim(format!(
                "design has {} rows but target has {} entries",
                design.nrows(),
                target.len()
            )));
        }
        match mode {
            LassoMode::Penalized { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                return Err(Error::domain(format!("penalty weight must be >= 0, got {lambda}")));
            }
            LassoMode::Constrained { tau } if !(tau >= 0.0 && tau.is_finite()) => {
                return Err(Error::domain(format!("l1 budget must be >= 0, got {tau}")));
            }
            _ => {}
        }
        linalg::ensure_finite_matrix(&design, "design")?;
        linalg::ensure_finite_vector(&target, "target")?;
        Ok(Self {
            design,
            target,
            mode,
        })
    }

    /// Skips validation; callers guarantee finite, shape-consistent inputs.
    pub(crate) fn new_unchecked(design: Matrix, target: Vector, mode: LassoMode) -> Self {
        Self {
            design,
            target,
            mode,
        }
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    pub fn mode(&self) -> LassoMode {
        self.mode
    }

    /// Dispatches on the mode; `tol` and `max_iter` are ignored by the pseudo-inverse.
    pub fn solve(&self, tol: f64, max_iter: usize) -> SolverReport {
        self.solve_from(None, tol, max_iter)
    }

    /// As [`LassoProblem::solve`], warm-starting the iterative modes from `init`.
    pub fn solve_from(&self, init: Option<&Vector>, tol: f64, max_iter: usize) -> SolverReport {
        match self.mode {
            LassoMode::Penalized { lambda } => penalized(self, lambda, init, tol, max_iter),
            LassoMode::Constrained { tau } => constrained(self, tau, init, tol, max_iter),
            LassoMode::PseudoInverse => pseudo_inverse(self),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub solution: Vector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration, starting with the initial point.
    pub history: Vec<f64>,
}

/// Entrywise `sign(v)·max(|v| − θ, 0)`.
pub fn soft_threshold(v: &Vector, theta: f64) -> Result<Vector> {
    if !(theta >= 0.0) {
        return Err(Error::domain(format!("threshold must be >= 0, got {theta}")));
    }
    Ok(shrink(v, theta))
}

fn shrink(v: &Vector, theta: f64) -> Vector {
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

/// Euclidean projection onto `{u : ‖u‖₁ ≤ τ}` (Duchi et al. sort-based rule).
pub fn project_l1_ball(v: &Vector, tau: f64) -> Result<Vector> {
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("l1 radius must be >= 0, got {tau}")));
    }
    Ok(project_l1(v, tau))
}

fn project_l1(v: &Vector, tau: f64) -> Vector {
    if v.lp_norm(1) <= tau {
        return v.clone();
    }
    if tau == 0.0 {
        return Vector::zeros(v.len());
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - tau) / (j + 1) as f64;
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    shrink(v, theta)
}

pub fn solve_lasso_penalized(p: &LassoProblem, tol: f64, max_iter: usize) -> Result<SolverReport> {
    match p.mode {
        LassoMode::Penalized { lambda } => Ok(penalized(p, lambda, None, tol, max_iter)),
        other => Err(Error::domain(format!("expected penalized mode, got {other:?}"))),
    }
}

pub fn solve_lasso_constrained(p: &LassoProblem, tol: f64, max_iter: usize) -> Result<SolverReport> {
    match p.mode {
        LassoMode::Constrained { tau } => Ok(constrained(p, tau, None, tol, max_iter)),
        other => Err(Error::domain(format!("expected constrained mode, got {other:?}"))),
    }
}

pub fn solve_pseudo_inverse(p: &LassoProblem) -> Result<SolverReport> {
    match p.mode {
        LassoMode::PseudoInverse => Ok(pseudo_inverse(p)),
        other => Err(Error::domain(format!("expected pseudo-inverse mode, got {other:?}"))),
    }
}

fn lipschitz(a: &Matrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let s = linalg::operator_norm_unchecked(a);
    s * s
}

/// Monotone FISTA over a smooth least-squares term and a prox/projection step.
///
/// Stops once the gradient-mapping norm at the accepted iterate is below `tol`.
struct Accelerated<'a> {
    a: &'a Matrix,
    b: &'a Vector,
    step: f64,
}

impl Accelerated<'_> {
    fn grad(&self, c: &Vector) -> Vector {
        self.a.transpose() * (self.a * c - self.b)
    }

    fn run(
        &self,
        init: Vector,
        tol: f64,
        max_iter: usize,
        objective: impl Fn(&Vector) -> f64,
        prox: impl Fn(&Vector, f64) -> Vector,
    ) -> SolverReport {
        let mut x = init;
        let mut f_x = objective(&x);
        let mut history = vec![f_x];
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut converged = false;
        let mut iterations = 0;

        while iterations < max_iter {
            iterations += 1;
            let z = prox(&(&y - self.grad(&y) * self.step), self.step);
            let f_z = objective(&z);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let x_prev = x.clone();
            if f_z <= f_x {
                x = z.clone();
                f_x = f_z;
            }
            y = &x + (&z - &x) * (t / t_next) + (&x - &x_prev) * ((t - 1.0) / t_next);
            t = t_next;
            history.push(f_x);

            let mapped = prox(&(&x - self.grad(&x) * self.step), self.step);
            if (&x - &mapped).norm() / self.step <= tol {
                converged = true;
                break;
            }
        }
        if max_iter == 0 {
            let mapped = prox(&(&x - self.grad(&x) * self.step), self.step);
            converged = (&x - &mapped).norm() / self.step <= tol;
        }
        SolverReport {
            solution: x,
            objective: f_x,
            iterations,
            converged: converged && f_x.is_finite(),
            history,
        }
    }
}

fn trivial_report(m: usize, objective: f64) -> SolverReport {
    SolverReport {
        solution: Vector::zeros(m),
        objective,
        iterations: 0,
        converged: true,
        history: vec![objective],
    }
}

fn penalized(p: &LassoProblem, lambda: f64, init: Option<&Vector>, tol: f64, max_iter: usize) -> SolverReport {
    let (a, b) = (&p.design, &p.target);
    let m = a.ncols();
    let objective = |c: &Vector| 0.5 * (a * c - b).norm_squared() + lambda * c.lp_norm(1);
    let l = lipschitz(a);
    if l == 0.0 {
        return trivial_report(m, 0.5 * b.norm_squared());
    }
    let solver = Accelerated { a, b, step: 1.0 / l };
    let start = init.cloned().unwrap_or_else(|| Vector::zeros(m));
    solver.run(
        start,
        tol,
        max_iter,
        objective,
        |v, step| shrink(v, lambda * step),
    )
}

fn constrained(p: &LassoProblem, tau: f64, init: Option<&Vector>, tol: f64, max_iter: usize) -> SolverReport {
    let (a, b) = (&p.design, &p.target);
    let m = a.ncols();
    let l = lipschitz(a);
    if l == 0.0 || tau == 0.0 {
        return trivial_report(m, b.norm());
    }
    let solver = Accelerated { a, b, step: 1.0 / l };
    let start = project_l1(&init.cloned().unwrap_or_else(|| Vector::zeros(m)), tau);
    let mut report = solver.run(
        start,
        tol,
        max_iter,
        |c: &Vector| 0.5 * (a * c - b).norm_squared(),
        |v, _| project_l1(v, tau),
    );
    // Report ‖Ac − b‖₂ (same minimizer as the smooth half-square used internally).
    report.objective = (a * &report.solution - b).norm();
    for h in report.history.iter_mut() {
        *h = (2.0 * h.max(0.0)).sqrt();
    }
    report
}

fn pseudo_inverse(p: &LassoProblem) -> SolverReport {
    let solution = linalg::pinv(&p.design, PINV_RCOND) * &p.target;
    let objective = (&p.design * &solution - &p.target).norm();
    SolverReport {
        solution,
        objective,
        iterations: 1,
        converged: objective.is_finite(),
        history: vec![objective],
    }
}
