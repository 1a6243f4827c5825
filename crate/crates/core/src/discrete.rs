//! Discrete-time dLDS: `y_t = D x_t`, `x_t = (Σ_m c_mt f_m) x_{t−1}`.
//!
//! Coefficient indexing: `c_t` drives the transition `x_{t−1} → x_t`, so a
//! path over `T` samples holds `T` latent states and `T − 1` coefficient
//! vectors, with `path.c[i]` mapping `path.x[i]` to `path.x[i + 1]`.
//!
//! Inference runs sequentially over time. At each step the bilinear problem
//! in `(x_t, c_t)` is resolved by block alternation: a LASSO for `c_t` on
//! the design `F̃ = [f_1 x_{t−1}, …, f_M x_{t−1}]`, then a least-squares (or
//! ℓ1-penalized) solve for `x_t` on the stacked design `[D; √λ0·I]`. All
//! quadratic terms carry a factor ½:
//!
//! ```text
//! E = Σ_t ½‖y_t − D x_t‖² + ½λ0‖x_t − F̃_t c_t‖² + λ1‖x_t‖₁ + λ2‖c_t‖₁
//! ```
//!
//! Learning takes projected gradient steps: columns of `D` are renormalized
//! to unit ℓ2 norm and each `f_m` to unit operator norm after every update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::sparse::{LassoMode, LassoProblem, PINV_RCOND};
use crate::systems::Trajectory;

/// Observation matrix plus a dictionary of linear dynamics operators.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    loading: Matrix,
    dictionary: Vec<Matrix>,
}

impl DiscreteModel {
    pub fn new(loading: Matrix, dictionary: Vec<Matrix>) -> Result<Self> {
        let p = loading.ncols();
        if p == 0 || loading.nrows() == 0 {
            return Err(Error::dim("loading matrix must be non-empty"));
        }
        if dictionary.is_empty() {
            return Err(Error::dim("dictionary must hold at least one operator"));
        }
        for (m, f) in dictionary.iter().enumerate() {
            if f.shape() != (p, p) {
                return Err(Error::dim(format!(
                    "operator {m} is {}x{}, expected {p}x{p}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            linalg::ensure_finite_matrix(f, "dynamics operator")?;
        }
        linalg::ensure_finite_matrix(&loading, "loading matrix")?;
        Ok(Self {
            loading,
            dictionary,
        })
    }

    /// Model with `D = I` (latent space equals observation space).
    pub fn with_identity_observation(dictionary: Vec<Matrix>) -> Result<Self> {
        let p = dictionary.first().map_or(0, |f| f.nrows());
        Self::new(Matrix::identity(p, p), dictionary)
    }

    /// Gaussian initialization projected onto the model constraints.
    pub fn random(obs_dim: usize, latent_dim: usize, operators: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if obs_dim == 0 || latent_dim == 0 || operators == 0 {
            return Err(Error::domain("model dimensions must be positive"));
        }
        let mut loading = gaussian(obs_dim, latent_dim, rng);
        normalize_columns(&mut loading, rng);
        let dictionary = (0..operators)
            .map(|_| unit_operator(gaussian(latent_dim, latent_dim, rng), rng))
            .collect();
        Ok(Self {
            loading,
            dictionary,
        })
    }

    pub fn loading(&self) -> &Matrix {
        &self.loading
    }

    pub fn dictionary(&self) -> &[Matrix] {
        &self.dictionary
    }

    pub fn obs_dim(&self) -> usize {
        self.loading.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.loading.ncols()
    }

    pub fn n_operators(&self) -> usize {
        self.dictionary.len()
    }

    pub fn has_identity_observation(&self) -> bool {
        self.loading.is_square() && self.loading == Matrix::identity(self.obs_dim(), self.obs_dim())
    }

    /// Applies a latent change of basis `x ↦ U⁻¹x`: `(D·U, {U⁻¹ f_m U})`.
    pub fn transformed(&self, u: &Matrix) -> Result<Self> {
        let u_inv = u
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::domain("basis change is not invertible"))?;
        Self::new(
            &self.loading * u,
            self.dictionary.iter().map(|f| &u_inv * f * u).collect(),
        )
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn normalize_columns(d: &mut Matrix, rng: &mut ChaCha8Rng) {
    for j in 0..d.ncols() {
        let mut norm = d.column(j).norm();
        while norm == 0.0 || !norm.is_finite() {
            let fresh: Vector = Vector::from_fn(d.nrows(), |_, _| StandardNormal.sample(rng));
            d.set_column(j, &fresh);
            norm = d.column(j).norm();
        }
        let scaled = d.column(j) / norm;
        d.set_column(j, &scaled);
    }
}

fn unit_operator(mut f: Matrix, rng: &mut ChaCha8Rng) -> Matrix {
    loop {
        let norm = linalg::operator_norm_unchecked(&f);
        if norm > 0.0 && norm.is_finite() {
            return f / norm;
        }
        f = gaussian(f.nrows(), f.ncols(), rng);
    }
}

/// Latent states and dynamics coefficients inferred for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    /// `T` latent states.
    pub x: Vec<Vector>,
    /// `T − 1` coefficient vectors; `c[i]` maps `x[i]` to `x[i + 1]`.
    pub c: Vec<Vector>,
    /// Inner solves that hit their iteration cap.
    pub unconverged_solves: usize,
}

impl CoefficientPath {
    pub fn new(x: Vec<Vector>, c: Vec<Vector>) -> Result<Self> {
        if x.len() < 2 || c.len() + 1 != x.len() {
            return Err(Error::dim(format!(
                "path needs T >= 2 states and T - 1 coefficients, got {} and {}",
                x.len(),
                c.len()
            )));
        }
        let p = x[0].len();
        let m = c[0].len();
        if x.iter().any(|v| v.len() != p) || c.iter().any(|v| v.len() != m) {
            return Err(Error::dim("path vectors have inconsistent dimensions"));
        }
        if x.iter().chain(&c).any(|v| v.iter().any(|e| !e.is_finite())) {
            return Err(Error::domain("path has non-finite entries"));
        }
        Ok(Self {
            x,
            c,
            unconverged_solves: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn latent_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.x)
    }

    pub fn coefficient_matrix(&self) -> Matrix {
        Matrix::from_columns(&self.c)
    }
}

/// Which LASSO variant infers the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Penalized,
    Constrained,
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the dynamics-fidelity term.
    pub lambda0: f64,
    /// ℓ1 weight on latent states.
    pub lambda1: f64,
    /// ℓ1 weight on coefficients (penalized solver).
    pub lambda2: f64,
    /// ℓ1 budget on coefficients (constrained solver).
    pub tau: f64,
    pub solver: SolverKind,
    pub eta_d: f64,
    pub eta_f: f64,
    /// Multiplicative per-epoch decay of both learning rates.
    pub decay: f64,
    pub perturb_sigma: f64,
    pub max_epochs: usize,
    pub conv_tol: f64,
    /// Consecutive flat epochs that count as a plateau.
    pub plateau_window: usize,
    pub solver_tol: f64,
    /// Iteration cap of each coefficient solve.
    pub solver_max_iter: usize,
    /// Iteration cap of each ℓ1-penalized latent-state solve.
    pub x_max_iter: usize,
    /// Block-alternation rounds per time step.
    pub inference_rounds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda1: 0.0,
            lambda2: 0.0,
            tau: 0.3,
            solver: SolverKind::Constrained,
            eta_d: 1.0,
            eta_f: 30.0,
            decay: 0.99,
            perturb_sigma: 0.1,
            max_epochs: 6000,
            conv_tol: 1e-8,
            plateau_window: 2,
            solver_tol: 1e-10,
            solver_max_iter: 10,
            x_max_iter: 200,
            inference_rounds: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda0", self.lambda0),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("tau", self.tau),
            ("perturb_sigma", self.perturb_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [("eta_d", self.eta_d), ("eta_f", self.eta_f), ("conv_tol", self.conv_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        if self.inference_rounds == 0 {
            return Err(Error::Config("inference_rounds must be >= 1".into()));
        }
        Ok(())
    }

    fn c_mode(&self) -> LassoMode {
        self.c_mode_weighted(self.lambda0)
    }

    /// Coefficient-step mode when the dynamics term carries weight `fidelity`.
    fn c_mode_weighted(&self, fidelity: f64) -> LassoMode {
        match self.solver {
            SolverKind::Constrained => LassoMode::Constrained { tau: self.tau },
            SolverKind::PseudoInverse => LassoMode::PseudoInverse,
            SolverKind::Penalized => {
                let lambda = if fidelity > 0.0 {
                    self.lambda2 / fidelity
                } else {
                    self.lambda2
                };
                LassoMode::Penalized { lambda }
            }
        }
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rmse: Vec<f64>,
    /// Full objective after each epoch.
    pub objective: Vec<f64>,
    /// Epochs (0-based) after which the dictionary was perturbed.
    pub perturbation_events: Vec<usize>,
    /// Epochs whose learning step was rejected for increasing the objective.
    pub rejected_steps: Vec<usize>,
    pub unconverged_solves: Vec<usize>,
    pub final_epoch: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: DiscreteModel,
    /// One path per training sequence.
    pub paths: Vec<CoefficientPath>,
    pub trace: TrainTrace,
}

impl TrainOutput {
    /// Path of the first (usually only) training sequence.
    pub fn path(&self) -> &CoefficientPath {
        &self.paths[0]
    }
}

/// `Σ_m c_m f_m`.
pub fn build_effective_dynamics(model: &DiscreteModel, c: &Vector) -> Result<Matrix> {
    if c.len() != model.n_operators() {
        return Err(Error::dim(format!(
            "{} coefficients for {} operators",
            c.len(),
            model.n_operators()
        )));
    }
    linalg::ensure_finite_vector(c, "coefficients")?;
    Ok(effective_dynamics(model, c))
}

fn effective_dynamics(model: &DiscreteModel, c: &Vector) -> Matrix {
    let p = model.latent_dim();
    model
        .dictionary
        .iter()
        .zip(c.iter())
        .fold(Matrix::zeros(p, p), |acc, (f, &cm)| acc + f * cm)
}

/// `F̃ = [f_1 x, …, f_M x]`, so that `F̃ c = (Σ c_m f_m) x`.
pub fn build_f_tilde(model: &DiscreteModel, x_prev: &Vector) -> Result<Matrix> {
    if x_prev.len() != model.latent_dim() {
        return Err(Error::dim(format!(
            "state has dimension {}, model latent dimension is {}",
            x_prev.len(),
            model.latent_dim()
        )));
    }
    Ok(f_tilde(model, x_prev))
}

fn f_tilde(model: &DiscreteModel, x_prev: &Vector) -> Matrix {
    let cols: Vec<Vector> = model.dictionary.iter().map(|f| f * x_prev).collect();
    Matrix::from_columns(&cols)
}

/// One time step of inference.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEstimate {
    pub x: Vector,
    pub c: Vector,
    pub converged: bool,
}

/// Precomputed pieces of the latent-state solve, fixed for a model and config.
struct StateSolver {
    obs_pinv: Matrix,
    stacked: Matrix,
    stacked_pinv: Option<Matrix>,
    sqrt_l0: f64,
    lambda1: f64,
    least_squares: bool,
}

impl StateSolver {
    fn new(model: &DiscreteModel, cfg: &TrainConfig) -> Self {
        let (k, p) = (model.obs_dim(), model.latent_dim());
        let sqrt_l0 = cfg.lambda0.sqrt();
        let mut stacked = Matrix::zeros(k + p, p);
        stacked.view_mut((0, 0), (k, p)).copy_from(&model.loading);
        stacked
            .view_mut((k, 0), (p, p))
            .copy_from(&(Matrix::identity(p, p) * sqrt_l0));
        let least_squares = cfg.lambda1 == 0.0 || cfg.solver == SolverKind::PseudoInverse;
        let stacked_pinv = least_squares.then(|| linalg::pinv(&stacked, PINV_RCOND));
        Self {
            obs_pinv: linalg::pinv(&model.loading, PINV_RCOND),
            stacked,
            stacked_pinv,
            sqrt_l0,
            lambda1: cfg.lambda1,
            least_squares,
        }
    }

    /// Observation-only estimate (no dynamics prior).
    fn observe(&self, model: &DiscreteModel, y: &Vector, cfg: &TrainConfig) -> (Vector, bool) {
        if self.least_squares {
            return (&self.obs_pinv * y, true);
        }
        let problem = LassoProblem::new_unchecked(
            model.loading.clone(),
            y.clone(),
            LassoMode::Penalized { lambda: self.lambda1 },
        );
        let r = problem.solve_from(Some(&(&self.obs_pinv * y)), cfg.solver_tol, cfg.x_max_iter);
        (r.solution, r.converged)
    }

    fn solve(&self, y: &Vector, prediction: &Vector, warm: &Vector, cfg: &TrainConfig) -> (Vector, bool) {
        let k = y.len();
        let mut target = Vector::zeros(self.stacked.nrows());
        target.rows_mut(0, k).copy_from(y);
        target
            .rows_mut(k, prediction.len())
            .copy_from(&(prediction * self.sqrt_l0));
        if let Some(pinv) = &self.stacked_pinv {
            return (pinv * target, true);
        }
        let problem = LassoProblem::new_unchecked(
            self.stacked.clone(),
            target,
            LassoMode::Penalized { lambda: self.lambda1 },
        );
        let r = problem.solve_from(Some(warm), cfg.solver_tol, cfg.x_max_iter);
        (r.solution, r.converged)
    }
}

fn solve_coefficients(
    design: Matrix,
    target: &Vector,
    warm: Option<&Vector>,
    mode: LassoMode,
    cfg: &TrainConfig,
) -> (Vector, bool) {
    let problem = LassoProblem::new_unchecked(design, target.clone(), mode);
    let r = problem.solve_from(warm, cfg.solver_tol, cfg.solver_max_iter);
    (r.solution, r.converged)
}

fn step_with(
    solver: &StateSolver,
    y: &Vector,
    x_prev: &Vector,
    c_warm: Option<&Vector>,
    model: &DiscreteModel,
    cfg: &TrainConfig,
) -> StepEstimate {
    let design = f_tilde(model, x_prev);
    let (mut x, mut converged) = solver.observe(model, y, cfg);
    let mut c = c_warm.cloned().unwrap_or_else(|| Vector::zeros(model.n_operators()));
    for _ in 0..cfg.inference_rounds {
        let (c_new, ok_c) = solve_coefficients(design.clone(), &x, Some(&c), cfg.c_mode(), cfg);
        c = c_new;
        let prediction = &design * &c;
        let (x_new, ok_x) = solver.solve(y, &prediction, &x, cfg);
        x = x_new;
        converged &= ok_c && ok_x;
    }
    StepEstimate { x, c, converged }
}

fn check_model_config(model: &DiscreteModel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if model.dictionary.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
        return Err(Error::domain("model has non-finite entries"));
    }
    Ok(())
}

/// Infers `(x_t, c_t)` for one observation given the previous latent state.
pub fn infer_step(
    y: &Vector,
    x_prev: &Vector,
    model: &DiscreteModel,
    cfg: &TrainConfig,
) -> Result<StepEstimate> {
    check_model_config(model, cfg)?;
    if y.len() != model.obs_dim() || x_prev.len() != model.latent_dim() {
        return Err(Error::dim(format!(
            "observation/state dims {}/{} do not match model {}/{}",
            y.len(),
            x_prev.len(),
            model.obs_dim(),
            model.latent_dim()
        )));
    }
    let solver = StateSolver::new(model, cfg);
    Ok(step_with(&solver, y, x_prev, None, model, cfg))
}

/// Sequential inference over a whole trajectory.
pub fn infer_sequence(traj: &Trajectory, model: &DiscreteModel, cfg: &TrainConfig) -> Result<CoefficientPath> {
    infer_sequence_warm(traj, model, cfg, None)
}

/// As [`infer_sequence`], warm-starting each coefficient solve from `warm`
/// (typically the previous epoch's path) or else from the previous step.
pub fn infer_sequence_warm(
    traj: &Trajectory,
    model: &DiscreteModel,
    cfg: &TrainConfig,
    warm: Option<&CoefficientPath>,
) -> Result<CoefficientPath> {
    check_model_config(model, cfg)?;
    if traj.dim() != model.obs_dim() {
        return Err(Error::dim(format!(
            "trajectory has {} channels, model expects {}",
            traj.dim(),
            model.obs_dim()
        )));
    }
    if let Some(w) = warm {
        if w.c.len() + 1 != traj.len() || w.c[0].len() != model.n_operators() {
            return Err(Error::dim("warm-start path does not match trajectory/model"));
        }
    }
    if model.has_identity_observation() {
        return Ok(infer_identity(traj, model, cfg, warm));
    }
    let solver = StateSolver::new(model, cfg);
    let mut unconverged = 0;
    let y0 = traj.sample(0);
    let (x0, ok) = solver.observe(model, &y0, cfg);
    unconverged += usize::from(!ok);
    let mut xs = vec![x0];
    let mut cs: Vec<Vector> = Vec::with_capacity(traj.len() - 1);
    for t in 1..traj.len() {
        let c_warm = warm.map(|w| &w.c[t - 1]).or(cs.last());
        let est = step_with(&solver, &traj.sample(t), &xs[t - 1], c_warm, model, cfg);
        unconverged += usize::from(!est.converged);
        xs.push(est.x);
        cs.push(est.c);
    }
    Ok(CoefficientPath {
        x: xs,
        c: cs,
        unconverged_solves: unconverged,
    })
}

/// `D = I`: the states are the observations and only `c_t` is solved for.
fn infer_identity(
    traj: &Trajectory,
    model: &DiscreteModel,
    cfg: &TrainConfig,
    warm: Option<&CoefficientPath>,
) -> CoefficientPath {
    let xs: Vec<Vector> = traj.samples().collect();
    let mut cs: Vec<Vector> = Vec::with_capacity(xs.len() - 1);
    let mut unconverged = 0;
    for t in 1..xs.len() {
        let c_warm = warm.map(|w| &w.c[t - 1]).or(cs.last());
        let (c, ok) = solve_coefficients(f_tilde(model, &xs[t - 1]), &xs[t], c_warm, cfg.c_mode_weighted(1.0), cfg);
        unconverged += usize::from(!ok);
        cs.push(c);
    }
    CoefficientPath {
        x: xs,
        c: cs,
        unconverged_solves: unconverged,
    }
}

/// Full inference objective (½-weighted quadratics; the ℓ1 term on `c` only
/// in penalized mode, where it is not replaced by the budget constraint).
pub fn objective(model: &DiscreteModel, traj: &Trajectory, path: &CoefficientPath, cfg: &TrainConfig) -> f64 {
    let identity = model.has_identity_observation();
    let mut total = 0.0;
    for (t, x) in path.x.iter().enumerate() {
        if !identity {
            total += 0.5 * (traj.sample(t) - &model.loading * x).norm_squared();
            total += cfg.lambda1 * x.lp_norm(1);
        }
        if t == 0 {
            continue;
        }
        let c = &path.c[t - 1];
        let fidelity = (x - f_tilde(model, &path.x[t - 1]) * c).norm_squared();
        // With D = I the states are pinned to the data; weight the dynamics term by 1.
        let weight = if identity { 1.0 } else { cfg.lambda0 };
        total += 0.5 * weight * fidelity;
        if cfg.solver == SolverKind::Penalized {
            total += cfg.lambda2 * c.lp_norm(1);
        }
    }
    total
}

/// `ŷ_t = D (Σ_m c_mt f_m) x_{t−1}` for `t = 1..T−1`, as a `k × (T−1)` matrix.
pub fn one_step_predict(model: &DiscreteModel, path: &CoefficientPath) -> Result<Matrix> {
    if path.x.first().map(|x| x.len()) != Some(model.latent_dim())
        || path.c.first().map(|c| c.len()) != Some(model.n_operators())
    {
        return Err(Error::dim("path does not match model dimensions"));
    }
    let cols: Vec<Vector> = path
        .c
        .iter()
        .zip(&path.x)
        .map(|(c, x_prev)| &model.loading * (f_tilde(model, x_prev) * c))
        .collect();
    Ok(Matrix::from_columns(&cols))
}

/// Relative one-step reconstruction error against the observed samples `1..T`.
pub fn reconstruction_rmse(model: &DiscreteModel, traj: &Trajectory, path: &CoefficientPath) -> Result<f64> {
    let pred = one_step_predict(model, path)?;
    let truth = traj.data().columns(1, traj.len() - 1);
    let denom = truth.norm();
    if denom == 0.0 {
        return Ok(if pred.norm() == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((truth - pred).norm() / denom)
}

/// Gradient of `½ mean_t ‖y_t − D x_t‖²` with respect to `D`.
pub fn loading_gradient(model: &DiscreteModel, ys: &Matrix, xs: &Matrix) -> Result<Matrix> {
    if ys.ncols() == 0 || ys.ncols() != xs.ncols() {
        return Err(Error::dim("observation and state batches must be nonempty and aligned"));
    }
    if ys.nrows() != model.obs_dim() || xs.nrows() != model.latent_dim() {
        return Err(Error::dim("batch dimensions do not match model"));
    }
    let n = ys.ncols() as f64;
    let residual = ys - &model.loading * xs;
    Ok(residual * xs.transpose() * (-1.0 / n))
}

/// Gradient step on `D` (see [`loading_gradient`]), then unit columns.
pub fn update_d(
    model: &DiscreteModel,
    ys: &Matrix,
    xs: &Matrix,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiscreteModel> {
    let grad = loading_gradient(model, ys, xs)?;
    let mut loading = &model.loading - grad * eta;
    normalize_columns(&mut loading, rng);
    Ok(DiscreteModel {
        loading,
        dictionary: model.dictionary.clone(),
    })
}

/// Aligned batch of transitions for the dictionary update.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    /// `x_t`, one column per transition.
    pub next: Matrix,
    /// `x_{t−1}`, one column per transition.
    pub prev: Matrix,
    /// `c_t`, one column per transition.
    pub coefficients: Matrix,
}

impl TransitionBatch {
    pub fn from_path(path: &CoefficientPath) -> Self {
        Self::from_paths(std::slice::from_ref(path))
    }

    /// Transitions of several paths; no transition crosses a path boundary.
    pub fn from_paths(paths: &[CoefficientPath]) -> Self {
        let next: Vec<Vector> = paths.iter().flat_map(|p| p.x[1..].iter().cloned()).collect();
        let prev: Vec<Vector> = paths.iter().flat_map(|p| p.x[..p.x.len() - 1].iter().cloned()).collect();
        let coefficients: Vec<Vector> = paths.iter().flat_map(|p| p.c.iter().cloned()).collect();
        Self {
            next: Matrix::from_columns(&next),
            prev: Matrix::from_columns(&prev),
            coefficients: Matrix::from_columns(&coefficients),
        }
    }

    fn len(&self) -> usize {
        self.next.ncols()
    }
}

/// Gradient of `½ mean_t ‖x_t − Σ c_mt f_m x_{t−1}‖²` with respect to each `f_m`.
pub fn dictionary_gradient(model: &DiscreteModel, batch: &TransitionBatch) -> Result<Vec<Matrix>> {
    let (p, m) = (model.latent_dim(), model.n_operators());
    let n = batch.len();
    if n == 0 || batch.prev.ncols() != n || batch.coefficients.ncols() != n {
        return Err(Error::dim("transition batch must be nonempty and aligned"));
    }
    if batch.next.nrows() != p || batch.prev.nrows() != p || batch.coefficients.nrows() != m {
        return Err(Error::dim("transition batch does not match model dimensions"));
    }
    let mut residual = batch.next.clone();
    for (f, coefs) in model.dictionary.iter().zip(batch.coefficients.row_iter()) {
        let fx = f * &batch.prev;
        for (mut col, (&c, fx_col)) in residual.column_iter_mut().zip(coefs.iter().zip(fx.column_iter())) {
            col.axpy(-c, &fx_col, 1.0);
        }
    }
    let scale = -1.0 / n as f64;
    Ok(batch
        .coefficients
        .row_iter()
        .map(|coefs| {
            let mut weighted = residual.clone();
            for (mut col, &c) in weighted.column_iter_mut().zip(coefs.iter()) {
                col *= c;
            }
            weighted * batch.prev.transpose() * scale
        })
        .collect())
}

/// Gradient step on every `f_m`, then renormalization to unit operator norm.
/// An operator left exactly zero is redrawn at random.
pub fn update_f(
    model: &DiscreteModel,
    batch: &TransitionBatch,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiscreteModel> {
    let grads = dictionary_gradient(model, batch)?;
    let dictionary = model
        .dictionary
        .iter()
        .zip(grads)
        .map(|(f, g)| unit_operator(f - g * eta, rng))
        .collect();
    Ok(DiscreteModel {
        loading: model.loading.clone(),
        dictionary,
    })
}

/// Adds i.i.d. `N(0, σ²)` noise to every operator entry and renormalizes.
pub fn perturb_dictionary(model: &DiscreteModel, sigma: f64, rng: &mut ChaCha8Rng) -> Result<DiscreteModel> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain(format!("perturbation scale must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(model.clone());
    }
    let dictionary = model
        .dictionary
        .iter()
        .map(|f| {
            let noisy = f + gaussian(f.nrows(), f.ncols(), rng) * sigma;
            unit_operator(noisy, rng)
        })
        .collect();
    Ok(DiscreteModel {
        loading: model.loading.clone(),
        dictionary,
    })
}

/// Full dLDS training: learned `D` (`k × latent_dim`) and `operators` dynamics.
///
/// Returns the iterate with the lowest reconstruction error seen, since a
/// plateau perturbation late in training may not be recovered from.
pub fn train_discrete(
    traj: &Trajectory,
    operators: usize,
    latent_dim: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_discrete_batch(std::slice::from_ref(traj), operators, latent_dim, cfg)
}

/// As [`train_discrete`] over several independent sequences sharing one model.
pub fn train_discrete_batch(
    trajs: &[Trajectory],
    operators: usize,
    latent_dim: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let k = batch_dim(trajs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = DiscreteModel::random(k, latent_dim, operators, &mut rng)?;
    train_loop(trajs, model, cfg, &mut rng, true)
}

/// Dictionary learning with `D` fixed to the identity.
pub fn train_identity_observation(traj: &Trajectory, operators: usize, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_identity_observation_batch(std::slice::from_ref(traj), operators, cfg)
}

pub fn train_identity_observation_batch(
    trajs: &[Trajectory],
    operators: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if operators == 0 {
        return Err(Error::domain("need at least one operator"));
    }
    let k = batch_dim(trajs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dictionary = (0..operators)
        .map(|_| unit_operator(gaussian(k, k, &mut rng), &mut rng))
        .collect();
    let model = DiscreteModel::with_identity_observation(dictionary)?;
    train_loop(trajs, model, cfg, &mut rng, false)
}

/// Continues training from an existing model (`D` is learned unless it is the identity).
pub fn train_from(trajs: &[Trajectory], model: DiscreteModel, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    batch_dim(trajs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let learn_d = !model.has_identity_observation();
    train_loop(trajs, model, cfg, &mut rng, learn_d)
}

fn batch_dim(trajs: &[Trajectory]) -> Result<usize> {
    let k = trajs
        .first()
        .map(Trajectory::dim)
        .ok_or_else(|| Error::domain("need at least one trajectory"))?;
    if trajs.iter().any(|t| t.dim() != k) {
        return Err(Error::dim("trajectories have different channel counts"));
    }
    Ok(k)
}

fn infer_batch(
    trajs: &[Trajectory],
    model: &DiscreteModel,
    cfg: &TrainConfig,
    warm: Option<&[CoefficientPath]>,
) -> Result<Vec<CoefficientPath>> {
    trajs
        .iter()
        .enumerate()
        .map(|(i, traj)| infer_sequence_warm(traj, model, cfg, warm.map(|w| &w[i])))
        .collect()
}

fn batch_objective(model: &DiscreteModel, trajs: &[Trajectory], paths: &[CoefficientPath], cfg: &TrainConfig) -> f64 {
    trajs
        .iter()
        .zip(paths)
        .map(|(traj, path)| objective(model, traj, path, cfg))
        .sum()
}

fn batch_rmse(model: &DiscreteModel, trajs: &[Trajectory], paths: &[CoefficientPath]) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (traj, path) in trajs.iter().zip(paths) {
        let pred = one_step_predict(model, path)?;
        let truth = traj.data().columns(1, traj.len() - 1);
        num += (truth - pred).norm_squared();
        den += truth.norm_squared();
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

fn train_loop(
    trajs: &[Trajectory],
    mut model: DiscreteModel,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    learn_d: bool,
) -> Result<TrainOutput> {
    let mut paths = infer_batch(trajs, &model, cfg, None)?;
    let mut trace = TrainTrace::default();
    if cfg.max_epochs == 0 {
        return Ok(TrainOutput { model, paths, trace });
    }
    let observations = Matrix::from_columns(&trajs.iter().flat_map(Trajectory::samples).collect::<Vec<_>>());
    let mut current = batch_objective(&model, trajs, &paths, cfg);
    let (mut eta_d, mut eta_f) = (cfg.eta_d, cfg.eta_f);
    let mut flat_epochs = 0;
    let mut best: Option<(f64, DiscreteModel, Vec<CoefficientPath>)> = None;

    for epoch in 0..cfg.max_epochs {
        let mut candidate = model.clone();
        if learn_d {
            let states = Matrix::from_columns(&paths.iter().flat_map(|p| p.x.iter().cloned()).collect::<Vec<_>>());
            candidate = update_d(&candidate, &observations, &states, eta_d, rng)?;
        }
        candidate = update_f(&candidate, &TransitionBatch::from_paths(&paths), eta_f, rng)?;
        let cand_paths = infer_batch(trajs, &candidate, cfg, Some(&paths))?;
        let cand_obj = batch_objective(&candidate, trajs, &cand_paths, cfg);
        let accepted = cand_obj.is_finite() && cand_obj <= current;
        if accepted {
            model = candidate;
            paths = cand_paths;
            current = cand_obj;
        } else {
            trace.rejected_steps.push(epoch);
            eta_d *= 0.5;
            eta_f *= 0.5;
        }
        eta_d *= cfg.decay;
        eta_f *= cfg.decay;

        let rmse = batch_rmse(&model, trajs, &paths)?;
        if !rmse.is_finite() {
            return Err(Error::Numerical(format!("reconstruction error diverged at epoch {epoch}")));
        }
        let previous = trace.rmse.last().copied();
        if best.as_ref().is_none_or(|(b, _, _)| rmse < *b) {
            best = Some((rmse, model.clone(), paths.clone()));
        }
        trace.rmse.push(rmse);
        trace.objective.push(current);
        trace.unconverged_solves.push(paths.iter().map(|p| p.unconverged_solves).sum());
        trace.final_epoch = epoch + 1;

        if rmse < cfg.conv_tol {
            trace.converged = true;
            break;
        }
        match previous {
            Some(prev) if (rmse - prev).abs() < cfg.conv_tol => flat_epochs += 1,
            _ => flat_epochs = 0,
        }
        if flat_epochs >= cfg.plateau_window && cfg.perturb_sigma > 0.0 {
            model = perturb_dictionary(&model, cfg.perturb_sigma, rng)?;
            paths = infer_batch(trajs, &model, cfg, Some(&paths))?;
            current = batch_objective(&model, trajs, &paths, cfg);
            trace.perturbation_events.push(epoch);
            flat_epochs = 0;
        }
    }
    if let Some((_, best_model, best_paths)) = best {
        model = best_model;
        paths = best_paths;
    }
    Ok(TrainOutput { model, paths, trace })
}
