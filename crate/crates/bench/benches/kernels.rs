use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dlds::continuous::{infer_c_step, ContinuousModel, CtTrainConfig};
use dlds::discrete::{infer_sequence, DiscreteModel, TrainConfig};
use dlds::linalg::{expm, expm_frechet};
use dlds::sparse::{LassoMode, LassoProblem};
use dlds::systems::{gen_fhn, FhnSpec};
use dlds::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn matrix_exponential(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("expm");
    for n in [3, 16] {
        let a = random_matrix(n, n, &mut rng);
        let e = random_matrix(n, n, &mut rng);
        group.bench_with_input(BenchmarkId::new("expm", n), &a, |b, a| b.iter(|| expm(black_box(a))));
        group.bench_with_input(BenchmarkId::new("frechet", n), &(a, e), |b, (a, e)| {
            b.iter(|| expm_frechet(black_box(a), black_box(e)))
        });
    }
    group.finish();
}

fn lasso(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let design = random_matrix(16, 12, &mut rng);
    let target = Vector::from_fn(16, |_, _| rng.random_range(-1.0..1.0));
    let mut group = c.benchmark_group("lasso");
    for (name, mode) in [
        ("penalized", LassoMode::Penalized { lambda: 0.1 }),
        ("constrained", LassoMode::Constrained { tau: 0.5 }),
        ("pseudo_inverse", LassoMode::PseudoInverse),
    ] {
        let problem = LassoProblem::new(design.clone(), target.clone(), mode).unwrap();
        group.bench_function(name, |b| b.iter(|| problem.solve(1e-10, 200)));
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let traj = gen_fhn(&FhnSpec::default()).unwrap();
    let cfg = TrainConfig::default();
    let identity = DiscreteModel::with_identity_observation(vec![random_matrix(2, 2, &mut rng), random_matrix(2, 2, &mut rng)]).unwrap();
    let learned = DiscreteModel::random(2, 2, 2, &mut rng).unwrap();
    let mut group = c.benchmark_group("inference");
    group.sample_size(20);
    group.bench_function("fhn_identity_observation", |b| b.iter(|| infer_sequence(&traj, &identity, &cfg)));
    group.bench_function("fhn_learned_observation", |b| b.iter(|| infer_sequence(&traj, &learned, &cfg)));

    let model = ContinuousModel::random(3, 4, &mut rng).unwrap();
    let x = Vector::from_vec(vec![1.0, 0.5, -0.2]);
    let x_next = Vector::from_vec(vec![0.9, 0.6, -0.1]);
    let ct = CtTrainConfig::default();
    group.bench_function("continuous_pair", |b| {
        b.iter(|| infer_c_step(&model, &x, &x_next, &Vector::zeros(4), &ct))
    });
    group.finish();
}

criterion_group!(benches, matrix_exponential, lasso, inference);
criterion_main!(benches);
