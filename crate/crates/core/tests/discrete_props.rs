use dlds::discrete::{
    build_effective_dynamics, build_f_tilde, dictionary_gradient, infer_sequence, loading_gradient, one_step_predict,
    perturb_dictionary, train_discrete, train_identity_observation, update_d, update_f, CoefficientPath,
    DiscreteModel, TrainConfig, TransitionBatch,
};
use dlds::linalg::operator_norm;
use dlds::systems::{gen_fhn, FhnSpec};
use dlds::{Matrix, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn gaussian_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_path(p: usize, m: usize, t: usize, rng: &mut ChaCha8Rng) -> CoefficientPath {
    let x = (0..t).map(|_| gaussian_vec(p, rng)).collect();
    let c = (0..t - 1).map(|_| gaussian_vec(m, rng)).collect();
    CoefficientPath::new(x, c).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bilinear_identity(seed in any::<u64>(), p in 1usize..7, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DiscreteModel::random(p + 1, p, m, &mut rng).unwrap();
        let x = gaussian_vec(p, &mut rng);
        let c = gaussian_vec(m, &mut rng);
        let lhs = build_effective_dynamics(&model, &c).unwrap() * &x;
        let rhs = build_f_tilde(&model, &x).unwrap() * &c;
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }
}

#[test]
fn prediction_is_invariant_to_latent_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (k, p, m) = (5, 3, 4);
    let model = DiscreteModel::random(k, p, m, &mut rng).unwrap();
    let path = random_path(p, m, 15, &mut rng);
    let reference = one_step_predict(&model, &path).unwrap();
    for _ in 0..50 {
        let u = loop {
            let u = gaussian_mat(p, p, &mut rng);
            let sv = u.clone().svd(false, false).singular_values;
            if sv.min() > 0.1 * sv.max() {
                break u;
            }
        };
        let moved = model.transformed(&u).unwrap();
        let u_inv = u.clone().try_inverse().unwrap();
        let x = path.x.iter().map(|x| &u_inv * x).collect();
        let moved_path = CoefficientPath::new(x, path.c.clone()).unwrap();
        let pred = one_step_predict(&moved, &moved_path).unwrap();
        let scale = reference.amax().max(1.0);
        assert!((pred - &reference).amax() <= 1e-8 * scale);
    }
}

fn dictionary_objective(model: &DiscreteModel, batch: &TransitionBatch) -> f64 {
    let n = batch.next.ncols();
    let mut total = 0.0;
    for t in 0..n {
        let f = build_effective_dynamics(model, &batch.coefficients.column(t).into_owned()).unwrap();
        total += (batch.next.column(t) - f * batch.prev.column(t)).norm_squared();
    }
    0.5 * total / n as f64
}

fn assert_gradient(analytic: &Matrix, fd: &Matrix, what: &str) {
    let rel = (analytic - fd).norm() / analytic.norm().max(1e-12);
    assert!(rel <= 1e-5, "{what}: relative error {rel}");
}

#[test]
fn dictionary_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let (p, m) = (4, 3);
        let model = DiscreteModel::random(p, p, m, &mut rng).unwrap();
        let batch = TransitionBatch::from_path(&random_path(p, m, 12, &mut rng));
        let grads = dictionary_gradient(&model, &batch).unwrap();
        let h = 1e-6;
        for (idx, grad) in grads.iter().enumerate() {
            let fd = Matrix::from_fn(p, p, |i, j| {
                let shifted = |delta: f64| {
                    let mut dict = model.dictionary().to_vec();
                    dict[idx][(i, j)] += delta;
                    DiscreteModel::new(model.loading().clone(), dict).unwrap()
                };
                (dictionary_objective(&shifted(h), &batch) - dictionary_objective(&shifted(-h), &batch)) / (2.0 * h)
            });
            assert_gradient(grad, &fd, "dictionary");
        }
    }
}

#[test]
fn loading_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let (k, p, n) = (6, 3, 20);
        let model = DiscreteModel::random(k, p, 2, &mut rng).unwrap();
        let ys = gaussian_mat(k, n, &mut rng);
        let xs = gaussian_mat(p, n, &mut rng);
        let loss = |d: &Matrix| 0.5 * (&ys - d * &xs).norm_squared() / n as f64;
        let grad = loading_gradient(&model, &ys, &xs).unwrap();
        let h = 1e-6;
        let fd = Matrix::from_fn(k, p, |i, j| {
            let mut plus = model.loading().clone();
            let mut minus = model.loading().clone();
            plus[(i, j)] += h;
            minus[(i, j)] -= h;
            (loss(&plus) - loss(&minus)) / (2.0 * h)
        });
        assert_gradient(&grad, &fd, "loading");
    }
}

fn assert_unit_norms(model: &DiscreteModel, epoch: usize) {
    for (j, col) in model.loading().column_iter().enumerate() {
        assert!((col.norm() - 1.0).abs() <= 1e-7, "epoch {epoch}: column {j} of D");
    }
    for (m, f) in model.dictionary().iter().enumerate() {
        let norm = operator_norm(f).unwrap();
        assert!((norm - 1.0).abs() <= 1e-7, "epoch {epoch}: operator {m} has norm {norm}");
    }
}

#[test]
fn updates_keep_unit_norms_every_epoch() {
    let traj = gen_fhn(&FhnSpec {
        samples: 120,
        ..FhnSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut model = DiscreteModel::random(2, 2, 3, &mut rng).unwrap();
    assert_unit_norms(&model, 0);
    for epoch in 1..=40 {
        let path = infer_sequence(&traj, &model, &cfg).unwrap();
        model = update_d(&model, traj.data(), &path.latent_matrix(), cfg.eta_d, &mut rng).unwrap();
        model = update_f(&model, &TransitionBatch::from_path(&path), cfg.eta_f, &mut rng).unwrap();
        if epoch % 10 == 0 {
            model = perturb_dictionary(&model, cfg.perturb_sigma, &mut rng).unwrap();
        }
        assert_unit_norms(&model, epoch);
    }
}

#[test]
fn trained_models_have_unit_norms_after_each_epoch_budget() {
    let traj = gen_fhn(&FhnSpec {
        samples: 80,
        ..FhnSpec::default()
    })
    .unwrap();
    for epochs in 1..=12 {
        let cfg = TrainConfig {
            max_epochs: epochs,
            ..TrainConfig::default()
        };
        let out = train_discrete(&traj, 3, 2, &cfg).unwrap();
        assert_unit_norms(&out.model, epochs);
    }
}

#[test]
fn seeded_training_is_deterministic() {
    let traj = gen_fhn(&FhnSpec {
        samples: 100,
        ..FhnSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 30,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train_identity_observation(&traj, 2, &cfg).unwrap();
    let b = train_identity_observation(&traj, 2, &cfg).unwrap();
    assert_eq!(a.trace.rmse, b.trace.rmse);
    assert_eq!(a.model, b.model);
    let c = train_discrete(&traj, 2, 2, &cfg).unwrap();
    let d = train_discrete(&traj, 2, 2, &cfg).unwrap();
    assert_eq!(c.trace.rmse, d.trace.rmse);

    let other = train_identity_observation(&traj, 2, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.trace.rmse, other.trace.rmse);
}
