use dlds::sparse::{LassoMode, LassoProblem};
use dlds::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn instance(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (Matrix, Vector) {
    let a = Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    let b = Vector::from_fn(rows, |_, _| rng.sample(StandardNormal));
    (a, b)
}

/// `Aᵀ(Ac − b) + λ g = 0` for some `g ∈ ∂‖c‖₁`.
fn subgradient_violation(a: &Matrix, b: &Vector, c: &Vector, lambda: f64) -> f64 {
    let grad = a.transpose() * (a * c - b);
    grad.iter()
        .zip(c.iter())
        .map(|(&g, &ci)| {
            if ci != 0.0 {
                (g + lambda * ci.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn penalized_solutions_satisfy_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let rows = rng.random_range(3..12);
        let cols = rng.random_range(2..10);
        let (a, b) = instance(&mut rng, rows, cols);
        let lambda = rng.random_range(0.01..2.0);
        let p = LassoProblem::new(a.clone(), b.clone(), LassoMode::Penalized { lambda }).unwrap();
        let report = p.solve(1e-13, 20_000);
        let scale = (a.transpose() * &b).amax().max(1.0);
        let v = subgradient_violation(&a, &b, &report.solution, lambda);
        assert!(v <= 1e-6 * scale, "case {case}: violation {v}");
    }
}

#[test]
fn constrained_solutions_are_feasible_and_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..200 {
        let rows = rng.random_range(3..12);
        let cols = rng.random_range(2..10);
        let (a, b) = instance(&mut rng, rows, cols);
        let tau = rng.random_range(0.05..3.0);
        let p = LassoProblem::new(a.clone(), b.clone(), LassoMode::Constrained { tau }).unwrap();
        let c = p.solve(1e-13, 20_000).solution;
        assert!(c.lp_norm(1) <= tau * (1.0 + 1e-9), "case {case}: infeasible");

        // On the ball boundary, optimality means every active gradient entry
        // has the maximal magnitude and points inward.
        let grad = a.transpose() * (&a * &c - &b);
        let gmax = grad.amax();
        if c.lp_norm(1) < tau * (1.0 - 1e-6) {
            assert!(gmax <= 1e-5 * (a.transpose() * &b).amax().max(1.0), "case {case}: interior not stationary");
        } else {
            for (&g, &ci) in grad.iter().zip(c.iter()) {
                if ci.abs() > 1e-9 {
                    assert!((g.abs() - gmax).abs() <= 1e-5 * gmax.max(1.0), "case {case}: {g} vs {gmax}");
                    assert!(g * ci <= 1e-9, "case {case}: active entry moves outward");
                }
            }
        }
    }
}

#[test]
fn constrained_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..20 {
        let (a, b) = instance(&mut rng, 4, 2);
        let tau = rng.random_range(0.2..2.0);
        let p = LassoProblem::new(a.clone(), b.clone(), LassoMode::Constrained { tau }).unwrap();
        let c = p.solve(1e-13, 20_000).solution;
        let loss = |c: &Vector| (&a * c - &b).norm();

        let steps = 400;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let u = -tau + 2.0 * tau * i as f64 / steps as f64;
                let v = -tau + 2.0 * tau * j as f64 / steps as f64;
                let cand = Vector::from_vec(vec![u, v]);
                if cand.lp_norm(1) <= tau {
                    best = best.min(loss(&cand));
                }
            }
        }
        assert!(loss(&c) <= best + 1e-9, "case {case}: solver worse than grid");
        assert!((loss(&c) - best).abs() <= 1e-2, "case {case}: {} vs grid {best}", loss(&c));
    }
}

#[test]
fn pseudo_inverse_is_minimum_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (a, b) = instance(&mut rng, 3, 6);
    let c = LassoProblem::new(a.clone(), b.clone(), LassoMode::PseudoInverse)
        .unwrap()
        .solve(0.0, 0)
        .solution;
    assert!((&a * &c - &b).norm() < 1e-10);
    // Minimum norm: c lies in the row space of A.
    let proj = a.transpose() * (&a * a.transpose()).try_inverse().unwrap() * &a * &c;
    assert!((proj - &c).norm() < 1e-10);
}
