use dlds::continuous::{
    coefficient_gradient, ct_loss, generator_gradient, infer_c_trace, train_continuous, ContinuousModel,
    CtTrainConfig,
};
use dlds::linalg::expm;
use dlds::systems::{gen_spiral_speed, SpiralSpeedSpec};
use dlds::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn setup(seed: u64, p: usize, l: usize) -> (ContinuousModel, Vector, Vector, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ContinuousModel::random(p, l, &mut rng).unwrap();
    let x = gaussian_vec(p, &mut rng);
    let x_next = gaussian_vec(p, &mut rng);
    let c = gaussian_vec(l, &mut rng) * 0.7;
    (model, x, x_next, c)
}

/// Squared residual plus the Frobenius penalty, computed from `expm` directly.
fn smooth_loss(generators: &[Matrix], x: &Vector, x_next: &Vector, c: &Vector, lambda_g: f64, tau: f64) -> f64 {
    let p = x.len();
    let m = generators
        .iter()
        .zip(c.iter())
        .fold(Matrix::zeros(p, p), |acc, (g, &cl)| acc + g * (cl * tau));
    let r = x_next - expm(&m).unwrap() * x;
    r.norm_squared() + lambda_g * generators.iter().map(|g| g.norm_squared()).sum::<f64>()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn coefficient_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let tau = 0.5 + seed as f64 * 0.05;
        let (model, x, x_next, c) = setup(seed, 3, 4);
        let grad = coefficient_gradient(&model, &x, &x_next, &c, tau).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..c.len())
            .map(|l| {
                let mut plus = c.clone();
                let mut minus = c.clone();
                plus[l] += h;
                minus[l] -= h;
                (smooth_loss(model.generators(), &x, &x_next, &plus, 0.0, tau)
                    - smooth_loss(model.generators(), &x, &x_next, &minus, 0.0, tau))
                    / (2.0 * h)
            })
            .collect();
        let rel = relative_error(grad.as_slice(), &fd);
        assert!(rel <= 1e-5, "seed {seed}: relative error {rel}");
    }
}

#[test]
fn generator_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let (tau, lambda_g) = (0.8, 0.3);
        let (model, x, x_next, c) = setup(100 + seed, 3, 2);
        let grads = generator_gradient(&model, &x, &x_next, &c, lambda_g, tau).unwrap();
        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut fd = Vec::new();
        for (l, grad) in grads.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    let shifted = |delta: f64| {
                        let mut gens = model.generators().to_vec();
                        gens[l][(i, j)] += delta;
                        smooth_loss(&gens, &x, &x_next, &c, lambda_g, tau)
                    };
                    analytic.push(grad[(i, j)]);
                    fd.push((shifted(h) - shifted(-h)) / (2.0 * h));
                }
            }
        }
        let rel = relative_error(&analytic, &fd);
        assert!(rel <= 1e-5, "seed {seed}: relative error {rel}");
    }
}

#[test]
fn coefficient_solve_never_increases_the_pair_loss() {
    let cfg = CtTrainConfig {
        lambda_c: 0.05,
        inner_c_iters: 50,
        ..CtTrainConfig::default()
    };
    for seed in 0..20 {
        let (model, x, x_next, c) = setup(200 + seed, 3, 4);
        let (_, history) = infer_c_trace(&model, &x, &x_next, &c, &cfg).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn loss_matches_direct_evaluation() {
    let (model, x, x_next, c) = setup(7, 2, 3);
    let (lc, lg, tau) = (0.2, 0.1, 0.9);
    let total = ct_loss(&model, &[(x.clone(), x_next.clone())], std::slice::from_ref(&c), lc, lg, tau).unwrap();
    let direct = smooth_loss(model.generators(), &x, &x_next, &c, lg, tau) + lc * c.lp_norm(1);
    assert!((total - direct).abs() <= 1e-12 * direct.max(1.0));
}

#[test]
fn seeded_training_is_deterministic() {
    let traj = gen_spiral_speed(&SpiralSpeedSpec {
        samples: 60,
        ..SpiralSpeedSpec::default()
    })
    .unwrap();
    let cfg = CtTrainConfig {
        max_epochs: 5,
        seed: 4,
        ..CtTrainConfig::speed()
    };
    let a = train_continuous(&traj, 3, &cfg).unwrap();
    let b = train_continuous(&traj, 3, &cfg).unwrap();
    assert_eq!(a.trace.loss, b.trace.loss);
    assert_eq!(a.model, b.model);
}
