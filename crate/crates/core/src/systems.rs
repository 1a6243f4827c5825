//! Ground-truth systems and the RK4 integrator that rolls them out.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Uniformly sampled multichannel time series, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: Matrix,
    dt: f64,
    labels: Option<Vec<f64>>,
}

impl Trajectory {
    /// `data` is `channels × samples`.
    pub fn new(data: Matrix, dt: f64) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::domain(format!(
                "a trajectory needs at least 2 samples, got {}",
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::domain("a trajectory needs at least one channel"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("sampling interval must be positive, got {dt}")));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (ch, t) = (idx % data.nrows(), idx / data.nrows());
            return Err(Error::domain(format!(
                "non-finite value at sample {t}, channel {ch}"
            )));
        }
        Ok(Self {
            data,
            dt,
            labels: None,
        })
    }

    pub fn from_samples(samples: &[Vector], dt: f64) -> Result<Self> {
        let k = samples.first().map_or(0, |s| s.len());
        if samples.iter().any(|s| s.len() != k) {
            return Err(Error::dim("samples have inconsistent dimensions"));
        }
        Self::new(Matrix::from_columns(samples), dt)
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::dim(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of channels `k`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn sample(&self, t: usize) -> Vector {
        self.data.column(t).into_owned()
    }

    pub fn samples(&self) -> impl Iterator<Item = Vector> + '_ {
        self.data.column_iter().map(|c| c.into_owned())
    }

    /// Per-channel z-scoring; constant channels are only centered.
    pub fn zscored(&self) -> Self {
        let mut data = self.data.clone();
        let n = data.ncols() as f64;
        for mut row in data.row_iter_mut() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
            let sd = (row.norm_squared() / n).sqrt();
            if sd > 0.0 {
                row /= sd;
            }
        }
        Self {
            data,
            dt: self.dt,
            labels: self.labels.clone(),
        }
    }
}

/// Classical fourth-order Runge–Kutta rollout producing `samples` points
/// spaced `dt` apart, starting with `x0`.
pub fn integrate_rk4<F>(f: F, x0: &Vector, samples: usize, dt: f64) -> Result<Trajectory>
where
    F: Fn(f64, &Vector) -> Vector,
{
    integrate_rk4_substeps(f, x0, samples, dt, 1)
}

/// As [`integrate_rk4`], taking `substeps` internal steps per sample interval.
pub fn integrate_rk4_substeps<F>(
    f: F,
    x0: &Vector,
    samples: usize,
    dt: f64,
    substeps: usize,
) -> Result<Trajectory>
where
    F: Fn(f64, &Vector) -> Vector,
{
    rollout(x0, samples, dt, substeps, |_, t, x| f(t, x))
}

/// RK4 where the field may also depend on the index of the sample interval
/// being integrated; piecewise systems switch regime between intervals only.
fn rollout<F>(x0: &Vector, samples: usize, dt: f64, substeps: usize, f: F) -> Result<Trajectory>
where
    F: Fn(usize, f64, &Vector) -> Vector,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("step must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(Error::domain("substeps must be >= 1"));
    }
    let h = dt / substeps as f64;
    let mut data = Matrix::zeros(x0.len(), samples);
    let mut x = x0.clone();
    if samples > 0 {
        data.set_column(0, &x);
    }
    for n in 1..samples {
        let interval = n - 1;
        for s in 0..substeps {
            let t = interval as f64 * dt + s as f64 * h;
            let k1 = f(interval, t, &x);
            let k2 = f(interval, t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
            let k3 = f(interval, t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
            let k4 = f(interval, t + h, &(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step: n });
        }
        data.set_column(n, &x);
    }
    Trajectory::new(data, dt)
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FhnSpec {
    pub i_ext: f64,
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub x0: [f64; 2],
    pub samples: usize,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for FhnSpec {
    fn default() -> Self {
        Self {
            i_ext: 0.5,
            tau: 20.0,
            a: 0.8,
            b: 0.7,
            x0: [-0.5, 0.0],
            samples: 1000,
            dt: 0.2,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub x0: [f64; 3],
    pub samples: usize,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for LorenzSpec {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 28.0,
            gamma: 8.0 / 3.0,
            x0: [-8.0, 7.0, 27.0],
            samples: 1000,
            dt: 0.01,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralSpeedSpec {
    /// Base generator, row-major 2×2.
    pub base: [f64; 4],
    /// Speed multiplier for each consecutive segment.
    pub speeds: Vec<f64>,
    pub segment_duration: f64,
    pub x0: [f64; 2],
    pub samples: usize,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for SpiralSpeedSpec {
    fn default() -> Self {
        Self {
            base: [-0.05, -1.0, 1.0, -0.05],
            speeds: vec![1.0, 2.0, 3.0, 4.0],
            segment_duration: 5.0,
            x0: [3.0, 0.0],
            samples: 400,
            dt: 0.05,
            substeps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotatingCenterSpec {
    /// Angular speed of the base center.
    pub omega: f64,
    pub segment_duration: f64,
    /// Fixed per-segment angles; drawn from the seed when absent.
    pub thetas: Option<Vec<f64>>,
    pub x0: [f64; 3],
    pub samples: usize,
    pub dt: f64,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for RotatingCenterSpec {
    fn default() -> Self {
        Self {
            omega: 1.0,
            segment_duration: 5.0,
            thetas: None,
            x0: [3.0, 0.0, 0.0],
            samples: 2000,
            dt: 0.05,
            substeps: 4,
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationSpec {
    pub dim: usize,
    pub operators: usize,
    /// Number of operators active per step.
    pub sparsity: usize,
    pub scale_range: [f64; 2],
    pub coef_range: [f64; 2],
    /// Nonzero entries in each episode's initial state.
    pub initial_nonzeros: usize,
    /// Rescale each step's coefficients so the state norm is preserved.
    pub preserve_norm: bool,
    /// Samples per episode.
    pub samples: usize,
    /// Independent sequences, each from a fresh sparse initial state.
    pub episodes: usize,
    pub seed: u64,
}

impl Default for PermutationSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            operators: 1,
            sparsity: 1,
            scale_range: [0.5, 1.5],
            coef_range: [0.5, 1.5],
            initial_nonzeros: 3,
            preserve_norm: true,
            samples: 12,
            episodes: 1,
            seed: default_seed(),
        }
    }
}

/// A generator configuration, tagged by system kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Fhn(FhnSpec),
    Lorenz(LorenzSpec),
    SpiralSpeed(SpiralSpeedSpec),
    RotatingCenter(RotatingCenterSpec),
    ScaledPermutation(PermutationSpec),
}

/// Planted dynamics returned alongside data for recovery scoring.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub dictionary: Vec<Matrix>,
    /// Per episode; `coefficients[e][t]` drives sample `t` to `t + 1`.
    pub coefficients: Vec<Vec<Vector>>,
}

/// Generated data: one trajectory per episode (a single one for ODE systems).
#[derive(Debug, Clone)]
pub struct Generated {
    pub trajectories: Vec<Trajectory>,
    pub truth: Option<GroundTruth>,
}

impl Generated {
    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectories[0]
    }
}

impl SystemSpec {
    pub fn generate(&self) -> Result<Generated> {
        let plain = |trajectory| Generated {
            trajectories: vec![trajectory],
            truth: None,
        };
        match self {
            SystemSpec::Fhn(s) => gen_fhn(s).map(plain),
            SystemSpec::Lorenz(s) => gen_lorenz(s).map(plain),
            SystemSpec::SpiralSpeed(s) => gen_spiral_speed(s).map(plain),
            SystemSpec::RotatingCenter(s) => gen_rotating_center(s).map(plain),
            SystemSpec::ScaledPermutation(s) => {
                let data = gen_scaled_permutation(s)?;
                Ok(Generated {
                    trajectories: data.episodes,
                    truth: Some(GroundTruth {
                        dictionary: data.dictionary,
                        coefficients: data.coefficients,
                    }),
                })
            }
        }
    }

    /// Replaces the random seed of stochastic generators; deterministic
    /// systems are returned unchanged.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            SystemSpec::RotatingCenter(s) => s.seed = seed,
            SystemSpec::ScaledPermutation(s) => s.seed = seed,
            _ => {}
        }
        self
    }

    /// Sampling interval of the generated data.
    pub fn dt(&self) -> f64 {
        match self {
            SystemSpec::Fhn(s) => s.dt,
            SystemSpec::Lorenz(s) => s.dt,
            SystemSpec::SpiralSpeed(s) => s.dt,
            SystemSpec::RotatingCenter(s) => s.dt,
            SystemSpec::ScaledPermutation(_) => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Fhn(_) => "fhn",
            SystemSpec::Lorenz(_) => "lorenz",
            SystemSpec::SpiralSpeed(_) => "spiral_speed",
            SystemSpec::RotatingCenter(_) => "rotating_center",
            SystemSpec::ScaledPermutation(_) => "scaled_permutation",
        }
    }
}

fn check_sampling(samples: usize, dt: f64) -> Result<()> {
    if samples < 2 {
        return Err(Error::domain(format!("need at least 2 samples, got {samples}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be finite")))
    }
}

/// FitzHugh–Nagumo: `v' = v − v³/3 − w + I`, `w' = (v + a − b·w)/τ`.
pub fn gen_fhn(spec: &FhnSpec) -> Result<Trajectory> {
    check_sampling(spec.samples, spec.dt)?;
    check_finite(&[spec.i_ext, spec.tau, spec.a, spec.b], "FHN parameters")?;
    check_finite(&spec.x0, "FHN initial state")?;
    if spec.tau == 0.0 {
        return Err(Error::domain("FHN time constant must be nonzero"));
    }
    let FhnSpec { i_ext, tau, a, b, .. } = *spec;
    let field = move |_t: f64, x: &Vector| {
        let (v, w) = (x[0], x[1]);
        Vector::from_vec(vec![v - v * v * v / 3.0 - w + i_ext, (v + a - b * w) / tau])
    };
    integrate_rk4_substeps(
        field,
        &Vector::from_column_slice(&spec.x0),
        spec.samples,
        spec.dt,
        spec.substeps,
    )
}

/// Lorenz system: `x' = α(y − x)`, `y' = x(β − z) − y`, `z' = xy − γz`.
pub fn gen_lorenz(spec: &LorenzSpec) -> Result<Trajectory> {
    check_sampling(spec.samples, spec.dt)?;
    check_finite(&[spec.alpha, spec.beta, spec.gamma], "Lorenz parameters")?;
    check_finite(&spec.x0, "Lorenz initial state")?;
    let LorenzSpec {
        alpha, beta, gamma, ..
    } = *spec;
    let field = move |_t: f64, s: &Vector| {
        let (x, y, z) = (s[0], s[1], s[2]);
        Vector::from_vec(vec![alpha * (y - x), x * (beta - z) - y, x * y - gamma * z])
    };
    integrate_rk4_substeps(
        field,
        &Vector::from_column_slice(&spec.x0),
        spec.samples,
        spec.dt,
        spec.substeps,
    )
}

fn segment_index(t: f64, duration: f64, count: usize) -> usize {
    // Small slack so sample times that land on a boundary switch exactly there.
    let idx = ((t + 1e-9 * duration) / duration).floor() as usize;
    idx.min(count.saturating_sub(1))
}

/// Decaying spiral whose speed multiplier steps at fixed time boundaries.
/// Labels carry the speed multiplier in effect at each sample.
pub fn gen_spiral_speed(spec: &SpiralSpeedSpec) -> Result<Trajectory> {
    check_sampling(spec.samples, spec.dt)?;
    check_finite(&spec.base, "spiral generator")?;
    check_finite(&spec.speeds, "spiral speeds")?;
    if spec.speeds.is_empty() || !(spec.segment_duration > 0.0) {
        return Err(Error::domain("spiral needs at least one speed and a positive segment duration"));
    }
    let base = Matrix::from_row_slice(2, 2, &spec.base);
    let speeds = &spec.speeds;
    let duration = spec.segment_duration;
    let dt = spec.dt;
    let field = |interval: usize, _t: f64, x: &Vector| {
        let s = speeds[segment_index(interval as f64 * dt, duration, speeds.len())];
        &base * x * s
    };
    let traj = rollout(
        &Vector::from_column_slice(&spec.x0),
        spec.samples,
        spec.dt,
        spec.substeps,
        field,
    )?;
    let labels = (0..spec.samples)
        .map(|n| spec.speeds[segment_index(n as f64 * dt, duration, spec.speeds.len())])
        .collect();
    traj.with_labels(labels)
}

/// Rotation about the x-axis by `theta`.
pub fn rotation_x(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c])
}

/// Base center generator: rotation in the x–y plane at angular speed `omega`.
pub fn center_generator(omega: f64) -> Matrix {
    Matrix::from_row_slice(3, 3, &[0.0, -omega, 0.0, omega, 0.0, 0.0, 0.0, 0.0, 0.0])
}

/// Center generator conjugated by `R_x(theta)`.
pub fn rotated_center_generator(omega: f64, theta: f64) -> Matrix {
    let r = rotation_x(theta);
    &r * center_generator(omega) * r.transpose()
}

/// Per-segment angles for a rotating-center spec: fixed or drawn from the seed.
pub fn rotating_center_thetas(spec: &RotatingCenterSpec) -> Vec<f64> {
    let horizon = spec.samples.saturating_sub(1) as f64 * spec.dt;
    let segments = ((horizon / spec.segment_duration).floor() as usize + 1).max(1);
    match &spec.thetas {
        Some(t) => t.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..segments).map(|_| rng.random_range(0.0..TAU)).collect()
        }
    }
}

/// Three-dimensional center whose rotation plane is re-drawn every segment.
/// Labels carry the segment angle at each sample.
pub fn gen_rotating_center(spec: &RotatingCenterSpec) -> Result<Trajectory> {
    check_sampling(spec.samples, spec.dt)?;
    check_finite(&[spec.omega], "rotation speed")?;
    check_finite(&spec.x0, "initial state")?;
    if !(spec.segment_duration > 0.0) {
        return Err(Error::domain("segment duration must be positive"));
    }
    let thetas = rotating_center_thetas(spec);
    if thetas.is_empty() {
        return Err(Error::domain("at least one segment angle is required"));
    }
    check_finite(&thetas, "segment angles")?;
    let generators: Vec<Matrix> = thetas
        .iter()
        .map(|&th| rotated_center_generator(spec.omega, th))
        .collect();
    let duration = spec.segment_duration;
    let dt = spec.dt;
    let n_seg = generators.len();
    let field = |interval: usize, _t: f64, x: &Vector| {
        &generators[segment_index(interval as f64 * dt, duration, n_seg)] * x
    };
    let traj = rollout(
        &Vector::from_column_slice(&spec.x0),
        spec.samples,
        spec.dt,
        spec.substeps,
        field,
    )?;
    let labels = (0..spec.samples)
        .map(|n| thetas[segment_index(n as f64 * dt, duration, n_seg)])
        .collect();
    traj.with_labels(labels)
}

/// Random scaled permutation: `S·P` with `P` a permutation, `S` diagonal.
fn scaled_permutation(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Matrix {
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(rng);
    let mut m = Matrix::zeros(dim, dim);
    for (src, &dst) in perm.iter().enumerate() {
        let s = if hi > lo { rng.random_range(lo..hi) } else { lo };
        m[(dst, src)] = s;
    }
    m
}

/// Output of [`gen_scaled_permutation`].
#[derive(Debug, Clone)]
pub struct PermutationData {
    pub episodes: Vec<Trajectory>,
    pub dictionary: Vec<Matrix>,
    /// Per episode, one coefficient vector per transition.
    pub coefficients: Vec<Vec<Vector>>,
}

/// Sparse states driven by random sparse positive mixtures of scaled permutations.
///
/// Every episode starts from `initial_nonzeros` random entries with random
/// sign and magnitude in `[0.5, 1.5)`; the dictionary is shared.
pub fn gen_scaled_permutation(spec: &PermutationSpec) -> Result<PermutationData> {
    check_sampling(spec.samples, 1.0)?;
    if spec.dim == 0 || spec.operators == 0 || spec.episodes == 0 {
        return Err(Error::domain("dimension, operator and episode counts must be positive"));
    }
    if spec.sparsity == 0 || spec.sparsity > spec.operators {
        return Err(Error::domain(format!(
            "sparsity must be in 1..={}, got {}",
            spec.operators, spec.sparsity
        )));
    }
    if spec.initial_nonzeros == 0 || spec.initial_nonzeros > spec.dim {
        return Err(Error::domain(format!(
            "initial_nonzeros must be in 1..={}, got {}",
            spec.dim, spec.initial_nonzeros
        )));
    }
    let [s_lo, s_hi] = spec.scale_range;
    let [c_lo, c_hi] = spec.coef_range;
    if !(0.0 < s_lo && s_lo <= s_hi && 0.0 < c_lo && c_lo <= c_hi) {
        return Err(Error::domain("scale and coefficient ranges must be positive and ordered"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dictionary: Vec<Matrix> = (0..spec.operators)
        .map(|_| scaled_permutation(&mut rng, spec.dim, s_lo, s_hi))
        .collect();

    let mut episodes = Vec::with_capacity(spec.episodes);
    let mut all_coefficients = Vec::with_capacity(spec.episodes);
    let mut ids: Vec<usize> = (0..spec.operators).collect();
    let mut coords: Vec<usize> = (0..spec.dim).collect();
    for _ in 0..spec.episodes {
        coords.shuffle(&mut rng);
        let mut x = Vector::zeros(spec.dim);
        for &i in coords.iter().take(spec.initial_nonzeros) {
            let mag = rng.random_range(0.5..1.5);
            x[i] = if rng.random_bool(0.5) { mag } else { -mag };
        }
        let mut samples = Vec::with_capacity(spec.samples);
        let mut coefficients = Vec::with_capacity(spec.samples - 1);
        samples.push(x.clone());
        for _ in 1..spec.samples {
            ids.shuffle(&mut rng);
            let mut c = Vector::zeros(spec.operators);
            for &m in ids.iter().take(spec.sparsity) {
                c[m] = if c_hi > c_lo { rng.random_range(c_lo..c_hi) } else { c_lo };
            }
            let mut next = Vector::zeros(spec.dim);
            for (m, f) in dictionary.iter().enumerate() {
                if c[m] != 0.0 {
                    next += f * &x * c[m];
                }
            }
            if spec.preserve_norm {
                let (old, new) = (x.norm(), next.norm());
                if new > 0.0 {
                    let r = old / new;
                    next *= r;
                    c *= r;
                }
            }
            coefficients.push(c);
            samples.push(next.clone());
            x = next;
        }
        episodes.push(Trajectory::from_samples(&samples, 1.0)?);
        all_coefficients.push(coefficients);
    }
    Ok(PermutationData {
        episodes,
        dictionary,
        coefficients: all_coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_constant() {
        let x0 = Vector::from_vec(vec![1.0, -2.0]);
        let tr = integrate_rk4(|_, x| Vector::zeros(x.len()), &x0, 10, 0.1).unwrap();
        assert!(tr.samples().all(|s| s == x0));
    }

    #[test]
    fn exponential_decay_oracle() {
        let x0 = Vector::from_vec(vec![1.0]);
        let tr = integrate_rk4(|_, x| -x, &x0, 101, 0.01).unwrap();
        assert!((tr.data()[(0, 100)] - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn divergence_reports_step() {
        let x0 = Vector::from_vec(vec![1.0]);
        let err = integrate_rk4(|_, x| x.map(|v| v * v * 1e3), &x0, 50, 0.5).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(Matrix::zeros(2, 1), 0.1).is_err());
        assert!(Trajectory::new(Matrix::zeros(2, 3), 0.0).is_err());
        let mut m = Matrix::zeros(2, 3);
        m[(1, 2)] = f64::INFINITY;
        assert!(Trajectory::new(m, 0.1).is_err());
    }

    #[test]
    fn lorenz_z_axis_is_invariant() {
        let spec = LorenzSpec {
            x0: [0.0, 0.0, 5.0],
            ..Default::default()
        };
        let tr = gen_lorenz(&spec).unwrap();
        let mut prev_z = f64::INFINITY;
        for s in tr.samples() {
            assert_eq!(s[0], 0.0);
            assert_eq!(s[1], 0.0);
            assert!(s[2] <= prev_z && s[2] > 0.0);
            prev_z = s[2];
        }
    }

    #[test]
    fn spiral_labels_switch_on_boundaries() {
        let spec = SpiralSpeedSpec::default();
        let tr = gen_spiral_speed(&spec).unwrap();
        let labels = tr.labels().unwrap();
        for (n, &l) in labels.iter().enumerate() {
            let t = n as f64 * spec.dt;
            let expect = spec.speeds[((t + 1e-9) / 5.0).floor() as usize];
            assert_eq!(l, expect, "sample {n}");
        }
        assert_eq!(labels[99], 1.0);
        assert_eq!(labels[100], 2.0);
    }

    #[test]
    fn spiral_with_unit_speed_contracts() {
        let spec = SpiralSpeedSpec {
            speeds: vec![1.0],
            ..Default::default()
        };
        let tr = gen_spiral_speed(&spec).unwrap();
        let radii: Vec<f64> = tr.samples().map(|s| s.norm()).collect();
        assert!(radii.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rotating_center_with_zero_angle_is_base() {
        let spec = RotatingCenterSpec {
            thetas: Some(vec![0.0; 4]),
            samples: 300,
            ..Default::default()
        };
        let tr = gen_rotating_center(&spec).unwrap();
        let base = center_generator(1.0);
        let x0 = Vector::from_column_slice(&spec.x0);
        let exact = integrate_rk4_substeps(|_, x| &base * x, &x0, 300, spec.dt, spec.substeps).unwrap();
        assert_eq!(tr.data(), exact.data());
    }

    #[test]
    fn rotating_center_seed_is_reproducible() {
        let spec = RotatingCenterSpec::default();
        assert_eq!(rotating_center_thetas(&spec), rotating_center_thetas(&spec));
        let other = RotatingCenterSpec {
            seed: 7,
            ..Default::default()
        };
        assert_ne!(rotating_center_thetas(&spec), rotating_center_thetas(&other));
        assert!(rotating_center_thetas(&spec).iter().all(|t| (0.0..TAU).contains(t)));
    }

    #[test]
    fn permutation_orbit_conserves_multiset() {
        let spec = PermutationSpec {
            dim: 9,
            scale_range: [1.0, 1.0],
            coef_range: [1.0, 1.0],
            samples: 20,
            ..Default::default()
        };
        let data = gen_scaled_permutation(&spec).unwrap();
        assert_eq!(data.dictionary.len(), 1);
        assert!(data.coefficients[0].iter().all(|c| c[0] == 1.0));
        let tr = &data.episodes[0];
        let sorted = |v: Vector| {
            let mut s: Vec<f64> = v.iter().copied().collect();
            s.sort_by(f64::total_cmp);
            s
        };
        let first = sorted(tr.sample(0));
        for t in 1..tr.len() {
            assert_eq!(sorted(tr.sample(t)), first);
        }
    }

    #[test]
    fn permutation_data_follows_planted_dynamics() {
        let spec = PermutationSpec {
            dim: 16,
            operators: 4,
            sparsity: 2,
            samples: 30,
            episodes: 3,
            seed: 3,
            ..Default::default()
        };
        let data = gen_scaled_permutation(&spec).unwrap();
        assert_eq!(data.episodes.len(), 3);
        let (tr, dict, coefs) = (&data.episodes[2], &data.dictionary, &data.coefficients[2]);
        for t in 1..tr.len() {
            let c = &coefs[t - 1];
            assert_eq!(c.iter().filter(|&&v| v != 0.0).count(), 2);
            assert!(c.iter().all(|&v| v >= 0.0));
            let mut pred = Vector::zeros(16);
            for (m, f) in dict.iter().enumerate() {
                pred += f * tr.sample(t - 1) * c[m];
            }
            assert!((pred - tr.sample(t)).amax() < 1e-12);
        }
    }

    #[test]
    fn system_spec_parses_from_toml() {
        let spec: SystemSpec = toml::from_str("kind = \"lorenz\"\nsamples = 50\n").unwrap();
        match spec {
            SystemSpec::Lorenz(l) => {
                assert_eq!(l.samples, 50);
                assert_eq!(l.dt, 0.01);
            }
            other => panic!("wrong kind {other:?}"),
        }
        assert!(toml::from_str::<SystemSpec>("kind = \"fhn\"\nbogus = 1\n").is_err());
    }
}
