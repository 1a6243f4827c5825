use approx::assert_relative_eq;
use dlds::linalg::{expm, expm_frechet};
use dlds::Matrix;
use proptest::prelude::*;

fn square(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| Matrix::from_vec(n, n, v) * scale)
}

fn sized_square() -> impl Strategy<Value = Matrix> {
    (1usize..6, prop_oneof![Just(0.1), Just(1.0), Just(4.0)]).prop_flat_map(|(n, s)| square(n, s))
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn expm_semigroup(a in sized_square(), s in -1.0..1.0f64, t in -1.0..1.0f64) {
        let lhs = expm(&(&a * (s + t))).unwrap();
        let rhs = expm(&(&a * s)).unwrap() * expm(&(&a * t)).unwrap();
        let scale = max_abs(&lhs).max(1.0);
        prop_assert!(max_abs(&(lhs - rhs)) <= 1e-8 * scale);
    }

    #[test]
    fn expm_inverse(a in sized_square()) {
        let n = a.nrows();
        let prod = expm(&a).unwrap() * expm(&(-&a)).unwrap();
        prop_assert!(max_abs(&(prod - Matrix::identity(n, n))) <= 1e-8);
    }

    #[test]
    fn frechet_matches_central_differences(a in sized_square(), seed in 0u64..1000) {
        let n = a.nrows();
        let e = Matrix::from_fn(n, n, |i, j| (((i * 7 + j * 3) as u64 + seed) % 11) as f64 / 11.0 - 0.5);
        let h = 1e-5;
        let fd = (expm(&(&a + &e * h)).unwrap() - expm(&(&a - &e * h)).unwrap()) / (2.0 * h);
        let exact = expm_frechet(&a, &e).unwrap();
        let scale = max_abs(&exact).max(1.0);
        prop_assert!(max_abs(&(fd - exact)) <= 1e-6 * scale);
    }
}

#[test]
fn expm_of_rotation_generator() {
    let theta = 0.7f64;
    let g = Matrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
    let expected = Matrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
    assert_relative_eq!(expm(&g).unwrap(), expected, epsilon = 1e-14);
}

#[test]
fn frechet_commuting_direction() {
    // For E = A, L(A, A) = A e^A.
    let a = Matrix::from_row_slice(3, 3, &[0.2, 1.0, 0.0, -0.5, 0.1, 0.3, 0.0, 0.4, -0.2]);
    let expected = &a * expm(&a).unwrap();
    assert_relative_eq!(expm_frechet(&a, &a).unwrap(), expected, epsilon = 1e-12);
}
