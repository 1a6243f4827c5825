//! Continuous-time dLDS with `D = I`: `x_{t+1} = expm(τ Σ_l c_lt G_l) x_t`.
//!
//! Training alternates, pair by pair, a proximal-gradient solve for `c_t`
//! with a gradient step on the generators. Both gradients go through the
//! Fréchet derivative of the matrix exponential: for `M = τ Σ c_l G_l` and
//! residual `r = x_{t+1} − e^M x_t`,
//!
//! ```text
//! ∂‖r‖²/∂M = −2 L(Mᵀ, r x_tᵀ)
//! ```
//!
//! Generators are not normalized after initialization; a Frobenius penalty
//! shrinks the unused ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::metrics;
use crate::sparse::soft_threshold;
use crate::systems::Trajectory;

/// Maximum step halvings per proximal iteration.
const MAX_BACKTRACK: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    generators: Vec<Matrix>,
}

impl ContinuousModel {
    pub fn new(generators: Vec<Matrix>) -> Result<Self> {
        let p = generators
            .first()
            .map(|g| g.nrows())
            .ok_or_else(|| Error::dim("need at least one generator"))?;
        if p == 0 {
            return Err(Error::dim("generators must be non-empty"));
        }
        for (l, g) in generators.iter().enumerate() {
            if g.shape() != (p, p) {
                return Err(Error::dim(format!(
                    "generator {l} is {}x{}, expected {p}x{p}",
                    g.nrows(),
                    g.ncols()
                )));
            }
            linalg::ensure_finite_matrix(g, "generator")?;
        }
        Ok(Self { generators })
    }

    /// Gaussian generators scaled to unit operator norm.
    pub fn random(latent_dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if latent_dim == 0 || count == 0 {
            return Err(Error::domain("model dimensions must be positive"));
        }
        let generators = (0..count)
            .map(|_| loop {
                let g = Matrix::from_fn(latent_dim, latent_dim, |_, _| StandardNormal.sample(rng));
                let norm = linalg::operator_norm_unchecked(&g);
                if norm > 0.0 {
                    break g / norm;
                }
            })
            .collect();
        Ok(Self { generators })
    }

    pub fn generators(&self) -> &[Matrix] {
        &self.generators
    }

    pub fn latent_dim(&self) -> usize {
        self.generators[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn frobenius_norms(&self) -> Vec<f64> {
        self.generators.iter().map(linalg::frobenius_norm).collect()
    }

    /// Indices of generators whose Frobenius norm is at least `fraction` of
    /// the largest, ordered by decreasing norm.
    pub fn dominant(&self, fraction: f64) -> Vec<usize> {
        let norms = self.frobenius_norms();
        let max = norms.iter().copied().fold(0.0, f64::max);
        let mut idx: Vec<usize> = (0..norms.len())
            .filter(|&l| max > 0.0 && norms[l] >= fraction * max)
            .collect();
        idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
        idx
    }

    /// `τ Σ_l c_l G_l`.
    pub fn combined(&self, c: &Vector, tau: f64) -> Result<Matrix> {
        self.check_coefficients(c)?;
        if !tau.is_finite() {
            return Err(Error::domain("propagation time must be finite"));
        }
        Ok(self.combine(c, tau))
    }

    fn combine(&self, c: &Vector, tau: f64) -> Matrix {
        let p = self.latent_dim();
        self.generators
            .iter()
            .zip(c.iter())
            .fold(Matrix::zeros(p, p), |acc, (g, &cl)| acc + g * (cl * tau))
    }

    fn check_coefficients(&self, c: &Vector) -> Result<()> {
        if c.len() != self.len() {
            return Err(Error::dim(format!(
                "{} coefficients for {} generators",
                c.len(),
                self.len()
            )));
        }
        linalg::ensure_finite_vector(c, "coefficients")
    }

    fn check_state(&self, x: &Vector) -> Result<()> {
        if x.len() != self.latent_dim() {
            return Err(Error::dim(format!(
                "state has dimension {}, generators are {}x{}",
                x.len(),
                self.latent_dim(),
                self.latent_dim()
            )));
        }
        linalg::ensure_finite_vector(x, "state")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtTrainConfig {
    /// ℓ1 weight on the coefficients.
    pub lambda_c: f64,
    /// Frobenius weight on the generators.
    pub lambda_g: f64,
    pub eta_g: f64,
    /// Minimum proximal step of the coefficient solve.
    pub eta_c: f64,
    /// Per-epoch decay of both rates.
    pub decay: f64,
    pub inner_c_iters: usize,
    pub inner_g_iters: usize,
    pub max_epochs: usize,
    /// Stop when the relative loss change over an epoch falls below this.
    pub conv_tol: f64,
    /// Propagation time per sample interval.
    pub tau: f64,
    /// Standard deviation of the random coefficient initialization.
    pub init_sigma: f64,
    /// Start each coefficient solve from the previous epoch's value.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for CtTrainConfig {
    fn default() -> Self {
        Self::speed()
    }
}

impl CtTrainConfig {
    /// Hyperparameters of the speed-modulated spiral experiment.
    pub fn speed() -> Self {
        Self {
            lambda_c: 0.1,
            lambda_g: 1.0,
            eta_g: 0.1,
            eta_c: 0.01,
            decay: 0.985,
            inner_c_iters: 20,
            inner_g_iters: 1,
            max_epochs: 100,
            conv_tol: 1e-9,
            tau: 1.0,
            init_sigma: 0.1,
            warm_start: false,
            seed: 0,
        }
    }

    /// Hyperparameters of the rotating-center experiment.
    pub fn rotation() -> Self {
        Self {
            lambda_c: 0.08,
            lambda_g: 20.0,
            eta_g: 5e-3,
            eta_c: 0.01,
            ..Self::speed()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_c", self.lambda_c), ("lambda_g", self.lambda_g), ("init_sigma", self.init_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [("eta_g", self.eta_g), ("eta_c", self.eta_c), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        if !(self.conv_tol >= 0.0) {
            return Err(Error::Config("conv_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// `expm(τ Σ_l c_l G_l) x`.
pub fn propagate(model: &ContinuousModel, x: &Vector, c: &Vector, tau: f64) -> Result<Vector> {
    model.check_state(x)?;
    let m = model.combined(c, tau)?;
    Ok(linalg::expm_unchecked(&m) * x)
}

/// `Σ_t ‖x_{t+1} − expm(τ Σ c_lt G_l) x_t‖² + λ_c‖c_t‖₁`, plus `λ_G Σ_l ‖G_l‖²_F`.
pub fn ct_loss(
    model: &ContinuousModel,
    pairs: &[(Vector, Vector)],
    coefficients: &[Vector],
    lambda_c: f64,
    lambda_g: f64,
    tau: f64,
) -> Result<f64> {
    if pairs.len() != coefficients.len() {
        return Err(Error::dim(format!(
            "{} pairs but {} coefficient vectors",
            pairs.len(),
            coefficients.len()
        )));
    }
    let mut total = 0.0;
    for ((x, x_next), c) in pairs.iter().zip(coefficients) {
        model.check_state(x)?;
        model.check_state(x_next)?;
        total += pair_loss(model, x, x_next, c, lambda_c, tau)?;
    }
    Ok(total + lambda_g * model.generators.iter().map(|g| g.norm_squared()).sum::<f64>())
}

fn pair_loss(model: &ContinuousModel, x: &Vector, x_next: &Vector, c: &Vector, lambda_c: f64, tau: f64) -> Result<f64> {
    let prediction = propagate(model, x, c, tau)?;
    Ok((x_next - prediction).norm_squared() + lambda_c * c.lp_norm(1))
}

fn residual_loss(model: &ContinuousModel, x: &Vector, x_next: &Vector, c: &Vector, tau: f64) -> f64 {
    let m = model.combine(c, tau);
    (x_next - linalg::expm_unchecked(&m) * x).norm_squared()
}

/// Gradient of `‖x_next − e^M x‖²` with respect to `M`, and the squared residual.
fn exponent_gradient(m: &Matrix, x: &Vector, x_next: &Vector) -> (Matrix, f64) {
    let exp_m = linalg::expm_unchecked(m);
    let r = x_next - &exp_m * x;
    let outer = &r * x.transpose();
    let (_, l) = linalg::expm_frechet_unchecked(&m.transpose(), &outer);
    (l * -2.0, r.norm_squared())
}

/// Gradient of the squared residual of one pair with respect to `c`.
pub fn coefficient_gradient(
    model: &ContinuousModel,
    x: &Vector,
    x_next: &Vector,
    c: &Vector,
    tau: f64,
) -> Result<Vector> {
    model.check_state(x)?;
    model.check_state(x_next)?;
    let m = model.combined(c, tau)?;
    let (grad_m, _) = exponent_gradient(&m, x, x_next);
    Ok(Vector::from_iterator(
        model.len(),
        model.generators.iter().map(|g| tau * grad_m.dot(g)),
    ))
}

/// Gradient of one pair's loss with respect to every generator, including
/// the Frobenius term `λ_G Σ ‖G_l‖²_F`.
pub fn generator_gradient(
    model: &ContinuousModel,
    x: &Vector,
    x_next: &Vector,
    c: &Vector,
    lambda_g: f64,
    tau: f64,
) -> Result<Vec<Matrix>> {
    model.check_state(x)?;
    model.check_state(x_next)?;
    let m = model.combined(c, tau)?;
    let (grad_m, _) = exponent_gradient(&m, x, x_next);
    Ok(model
        .generators
        .iter()
        .zip(c.iter())
        .map(|(g, &cl)| &grad_m * (cl * tau) + g * (2.0 * lambda_g))
        .collect())
}

/// Proximal-gradient solve for one pair's coefficients, returning the
/// iterate and the per-iteration loss (starting with the loss at `c_init`).
///
/// The step starts at `max(η_c, 1/L)` with `L` the Gauss–Newton curvature
/// at the current point and is halved until the loss does not increase.
pub fn infer_c_trace(
    model: &ContinuousModel,
    x: &Vector,
    x_next: &Vector,
    c_init: &Vector,
    cfg: &CtTrainConfig,
) -> Result<(Vector, Vec<f64>)> {
    model.check_state(x)?;
    model.check_state(x_next)?;
    model.check_coefficients(c_init)?;
    let tau = cfg.tau;
    let lambda = cfg.lambda_c;
    let objective = |c: &Vector| residual_loss(model, x, x_next, c, tau) + lambda * c.lp_norm(1);

    let directions: Vec<Vector> = model.generators.iter().map(|g| g * x * tau).collect();
    let design = Matrix::from_columns(&directions);
    let curvature = 2.0 * linalg::operator_norm_unchecked(&design).powi(2);
    let base_step = if curvature > 0.0 {
        cfg.eta_c.max(1.0 / curvature)
    } else {
        cfg.eta_c
    };

    let mut c = c_init.clone();
    let mut current = objective(&c);
    let mut history = vec![current];
    for _ in 0..cfg.inner_c_iters {
        let m = model.combine(&c, tau);
        let (grad_m, _) = exponent_gradient(&m, x, x_next);
        let grad = Vector::from_iterator(model.len(), model.generators.iter().map(|g| tau * grad_m.dot(g)));
        let mut step = base_step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = soft_threshold(&(&c - &grad * step), lambda * step)?;
            let value = objective(&trial);
            if value <= current {
                accepted = Some((trial, value));
                break;
            }
            step *= 0.5;
        }
        let Some((next, value)) = accepted else {
            break;
        };
        let stalled = (current - value) <= 1e-15 * current.abs().max(1e-300);
        c = next;
        current = value;
        history.push(current);
        if stalled {
            break;
        }
    }
    Ok((c, history))
}

pub fn infer_c_step(
    model: &ContinuousModel,
    x: &Vector,
    x_next: &Vector,
    c_init: &Vector,
    cfg: &CtTrainConfig,
) -> Result<Vector> {
    infer_c_trace(model, x, x_next, c_init, cfg).map(|(c, _)| c)
}

/// One gradient step on every generator for a single pair.
pub fn update_g_step(
    model: &ContinuousModel,
    x: &Vector,
    x_next: &Vector,
    c: &Vector,
    eta_g: f64,
    lambda_g: f64,
    tau: f64,
) -> Result<ContinuousModel> {
    let grads = generator_gradient(model, x, x_next, c, lambda_g, tau)?;
    let generators = model
        .generators
        .iter()
        .zip(grads)
        .map(|(g, grad)| g - grad * eta_g)
        .collect();
    ContinuousModel::new(generators)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CtTrainTrace {
    /// Full loss after each epoch.
    pub loss: Vec<f64>,
    pub final_epoch: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CtTrainOutput {
    pub model: ContinuousModel,
    /// `T − 1` coefficient vectors; entry `t` transports sample `t` to `t + 1`.
    pub coefficients: Vec<Vector>,
    pub trace: CtTrainTrace,
}

/// Per-pair alternating training from a random unit-operator-norm start.
///
/// Within an epoch each pair takes a stochastic step on its own loss term
/// plus a `1/(T−1)` share of the Frobenius penalty, so one epoch applies the
/// full penalty once.
pub fn train_continuous(traj: &Trajectory, generators: usize, cfg: &CtTrainConfig) -> Result<CtTrainOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ContinuousModel::random(traj.dim(), generators, &mut rng)?;
    train_continuous_from(traj, model, cfg, &mut rng)
}

pub fn train_continuous_from(
    traj: &Trajectory,
    mut model: ContinuousModel,
    cfg: &CtTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CtTrainOutput> {
    cfg.validate()?;
    if traj.dim() != model.latent_dim() {
        return Err(Error::dim(format!(
            "trajectory has {} channels, generators are {}x{}",
            traj.dim(),
            model.latent_dim(),
            model.latent_dim()
        )));
    }
    let samples: Vec<Vector> = traj.samples().collect();
    let pairs = samples.len() - 1;
    let share = cfg.lambda_g / pairs as f64;
    let init = Normal::new(0.0, cfg.init_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut coefficients = vec![Vector::zeros(model.len()); pairs];
    let mut trace = CtTrainTrace::default();
    let (mut eta_g, mut eta_c) = (cfg.eta_g, cfg.eta_c);

    for epoch in 0..cfg.max_epochs {
        let step_cfg = CtTrainConfig { eta_c, ..cfg.clone() };
        for t in 0..pairs {
            let c_init = if cfg.warm_start && epoch > 0 {
                coefficients[t].clone()
            } else {
                Vector::from_fn(model.len(), |_, _| init.sample(rng))
            };
            let (x, x_next) = (&samples[t], &samples[t + 1]);
            let c = infer_c_step(&model, x, x_next, &c_init, &step_cfg)?;
            for _ in 0..cfg.inner_g_iters {
                model = update_g_step(&model, x, x_next, &c, eta_g, share, cfg.tau)?;
            }
            coefficients[t] = c;
        }
        if model.generators.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!("generators diverged at epoch {epoch}")));
        }
        eta_g *= cfg.decay;
        eta_c *= cfg.decay;

        let loss = epoch_loss(&model, &samples, &coefficients, cfg);
        let previous = trace.loss.last().copied();
        trace.loss.push(loss);
        trace.final_epoch = epoch + 1;
        if let Some(prev) = previous {
            if (prev - loss).abs() <= cfg.conv_tol * prev.abs().max(1e-300) {
                trace.converged = true;
                break;
            }
        }
    }
    Ok(CtTrainOutput {
        model,
        coefficients,
        trace,
    })
}

fn epoch_loss(model: &ContinuousModel, samples: &[Vector], coefficients: &[Vector], cfg: &CtTrainConfig) -> f64 {
    let data: f64 = coefficients
        .iter()
        .enumerate()
        .map(|(t, c)| residual_loss(model, &samples[t], &samples[t + 1], c, cfg.tau) + cfg.lambda_c * c.lp_norm(1))
        .sum();
    data + cfg.lambda_g * model.generators.iter().map(|g| g.norm_squared()).sum::<f64>()
}

/// Re-infers coefficients for every pair with a fixed model (starting at zero).
pub fn infer_continuous(model: &ContinuousModel, traj: &Trajectory, cfg: &CtTrainConfig) -> Result<Vec<Vector>> {
    let samples: Vec<Vector> = traj.samples().collect();
    samples
        .windows(2)
        .map(|w| infer_c_step(model, &w[0], &w[1], &Vector::zeros(model.len()), cfg))
        .collect()
}

/// `x̂_{t+1} = propagate(x_t, c_t)` for every pair, as a `p × (T−1)` matrix.
pub fn one_step_predict(model: &ContinuousModel, traj: &Trajectory, coefficients: &[Vector], tau: f64) -> Result<Matrix> {
    if coefficients.len() + 1 != traj.len() {
        return Err(Error::dim("need one coefficient vector per sample pair"));
    }
    let cols = coefficients
        .iter()
        .enumerate()
        .map(|(t, c)| propagate(model, &traj.sample(t), c, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_columns(&cols))
}

/// Rolls `x0` forward `steps` times under fixed coefficients.
pub fn rollout(model: &ContinuousModel, x0: &Vector, c: &Vector, tau: f64, steps: usize) -> Result<Matrix> {
    model.check_state(x0)?;
    let step = linalg::expm_unchecked(&model.combined(c, tau)?);
    let mut cols = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    cols.push(x.clone());
    for _ in 0..steps {
        x = &step * x;
        cols.push(x.clone());
    }
    Ok(Matrix::from_columns(&cols))
}

/// Least-squares coefficients expressing `target` in the span of the chosen generators.
pub fn project_onto_generators(model: &ContinuousModel, indices: &[usize], target: &Matrix) -> Result<Vector> {
    if target.shape() != (model.latent_dim(), model.latent_dim()) {
        return Err(Error::dim("target generator has the wrong shape"));
    }
    if indices.iter().any(|&l| l >= model.len()) {
        return Err(Error::dim("generator index out of range"));
    }
    let cols: Vec<Vector> = indices
        .iter()
        .map(|&l| Vector::from_column_slice(model.generators[l].as_slice()))
        .collect();
    let basis = Matrix::from_columns(&cols);
    let sub = linalg::pinv(&basis, crate::sparse::PINV_RCOND) * Vector::from_column_slice(target.as_slice());
    let mut c = Vector::zeros(model.len());
    for (&l, &v) in indices.iter().zip(sub.iter()) {
        c[l] = v;
    }
    Ok(c)
}

/// Correlation between rollouts of `truth` and of the best fit to it in the
/// span of the chosen generators, both started at `x0`.
pub fn interpolation_correlation(
    model: &ContinuousModel,
    indices: &[usize],
    truth: &Matrix,
    x0: &Vector,
    steps: usize,
) -> Result<f64> {
    let c = project_onto_generators(model, indices, truth)?;
    let fitted = rollout(model, x0, &c, 1.0, steps)?;
    let reference = rollout(&ContinuousModel::new(vec![truth.clone()])?, x0, &Vector::from_element(1, 1.0), 1.0, steps)?;
    metrics::pearson_r(reference.as_slice(), fitted.as_slice())
}
