//! Dense kernels shared by the discrete and continuous models.
//!
//! Matrices are `nalgebra` dense matrices of `f64` stored column-major. The
//! matrix exponential uses scaling and squaring with the diagonal Padé
//! approximants of degree 3, 5, 7, 9 and 13 (Higham, 2005), choosing the
//! lowest degree whose backward-error bound holds for the 1-norm of the
//! input. Its Fréchet derivative is read off the upper-right block of the
//! exponential of `[[A, E], [0, A]]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense column-major matrix.
pub type Matrix = DMatrix<f64>;
/// Dense column vector.
pub type Vector = DVector<f64>;

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each Padé degree meets unit-roundoff backward error.
const THETA3: f64 = 1.495585217958292e-2;
const THETA5: f64 = 2.53939833006323e-1;
const THETA7: f64 = 9.504178996162932e-1;
const THETA9: f64 = 2.097847961257068;
const THETA13: f64 = 5.371920351148152;

const POWER_ITER_MAX: usize = 1000;
const POWER_ITER_RTOL: f64 = 1e-13;

pub(crate) fn ensure_finite_matrix(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_finite_vector(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} has non-finite entries")))
    }
}

fn ensure_square(a: &Matrix, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Maximum absolute column sum.
pub fn norm1(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(a: &Matrix) -> Result<Matrix> {
    ensure_square(a, "expm input")?;
    ensure_finite_matrix(a, "expm input")?;
    Ok(expm_unchecked(a))
}

pub(crate) fn expm_unchecked(a: &Matrix) -> Matrix {
    let n = a.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let ident = Matrix::identity(n, n);
    let a_norm = norm1(a);
    if a_norm == 0.0 {
        return ident;
    }

    let a2 = a * a;
    let (u, v, squarings) = if a_norm <= THETA3 {
        let (u, v) = pade_low(a, &a2, &ident, &PADE3);
        (u, v, 0)
    } else if a_norm <= THETA5 {
        let (u, v) = pade_low(a, &a2, &ident, &PADE5);
        (u, v, 0)
    } else if a_norm <= THETA7 {
        let (u, v) = pade_low(a, &a2, &ident, &PADE7);
        (u, v, 0)
    } else if a_norm <= THETA9 {
        let (u, v) = pade_low(a, &a2, &ident, &PADE9);
        (u, v, 0)
    } else {
        let s = (a_norm / THETA13).log2().ceil().max(0.0) as i32;
        let scale = 2f64.powi(-s);
        let a_s = a * scale;
        let a2_s = &a2 * (scale * scale);
        let (u, v) = pade13(&a_s, &a2_s, &ident);
        (u, v, s)
    };

    let p = &v + &u;
    let q = &v - &u;
    let mut r = match q.clone().lu().solve(&p) {
        Some(r) => r,
        // q is a well-conditioned perturbation of 2I·b0 within the theta bounds
        None => q.try_inverse().map(|qi| qi * p).unwrap_or_else(|| {
            Matrix::from_element(n, n, f64::NAN)
        }),
    };
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn pade_low(a: &Matrix, a2: &Matrix, ident: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let mut u_acc = Matrix::zeros(n, n);
    let mut v_acc = Matrix::zeros(n, n);
    let mut power = ident.clone();
    for k in 0..b.len() / 2 {
        u_acc += &power * b[2 * k + 1];
        v_acc += &power * b[2 * k];
        power = &power * a2;
    }
    (a * u_acc, v_acc)
}

fn pade13(a: &Matrix, a2: &Matrix, ident: &Matrix) -> (Matrix, Matrix) {
    let b = &PADE13;
    let a4 = a2 * a2;
    let a6 = &a4 * a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + a2 * b[3]
        + ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + a2 * b[2]
        + ident * b[0];
    (u, v)
}

/// Directional derivative of `expm` at `a` in direction `e`.
pub fn expm_frechet(a: &Matrix, e: &Matrix) -> Result<Matrix> {
    ensure_square(a, "expm_frechet base")?;
    if a.shape() != e.shape() {
        return Err(Error::dim(format!(
            "expm_frechet direction is {}x{}, base is {}x{}",
            e.nrows(),
            e.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite_matrix(a, "expm_frechet base")?;
    ensure_finite_matrix(e, "expm_frechet direction")?;
    Ok(expm_frechet_unchecked(a, e).1)
}

/// Returns `(expm(a), L(a, e))` from one exponential of the block matrix.
pub(crate) fn expm_frechet_unchecked(a: &Matrix, e: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let e_norm = norm1(e);
    if e_norm == 0.0 {
        return (expm_unchecked(a), Matrix::zeros(n, n));
    }
    // The derivative is linear in e; rescale so both blocks have comparable size.
    let scale = norm1(a).max(1.0) / e_norm;
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((n, n), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(&(e * scale));
    let big = expm_unchecked(&block);
    let exp_a = big.view((0, 0), (n, n)).into_owned();
    let deriv = big.view((0, n), (n, n)).into_owned() / scale;
    (exp_a, deriv)
}

/// Largest singular value.
///
/// Power iteration on `AᵀA`, started from its largest column; falls back to a
/// full SVD when the residual has not settled after 1000 iterations.
pub fn operator_norm(a: &Matrix) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::domain("operator norm of an empty matrix"));
    }
    ensure_finite_matrix(a, "operator_norm input")?;
    Ok(operator_norm_unchecked(a))
}

pub(crate) fn operator_norm_unchecked(a: &Matrix) -> f64 {
    let gram = a.transpose() * a;
    let start = gram
        .column_iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
        .map(|c| c.into_owned());
    let Some(mut v) = start else {
        return 0.0;
    };
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return 0.0;
    }
    v /= v_norm;
    for _ in 0..POWER_ITER_MAX {
        let w = &gram * &v;
        let mu = v.dot(&w);
        let residual = (&w - &v * mu).norm();
        if mu <= 0.0 {
            break;
        }
        if residual <= POWER_ITER_RTOL * mu {
            return mu.sqrt();
        }
        v = &w / w.norm();
    }
    svd_max_singular(a)
}

fn svd_max_singular(a: &Matrix) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.norm()
}

/// Moore–Penrose pseudo-inverse; singular values below `rcond·σ_max` are dropped.
pub fn pinv(a: &Matrix, rcond: f64) -> Matrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Matrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let sigma = &svd.singular_values;
    let cutoff = rcond * sigma.iter().copied().fold(0.0, f64::max);
    let mut out = Matrix::zeros(n, m);
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Truncated Taylor series, kept independent of the Padé path.
    fn taylor_expm(a: &Matrix, terms: usize) -> Matrix {
        let n = a.nrows();
        let mut sum = Matrix::identity(n, n);
        let mut term = Matrix::identity(n, n);
        for k in 1..terms {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let r = expm(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(r, Matrix::identity(3, 3));
    }

    #[test]
    fn expm_of_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        let r = expm(&a).unwrap();
        assert_relative_eq!(r[(0, 0)], std::f64::consts::E, max_relative = 1e-14);
        assert_relative_eq!(r[(1, 1)], (-1f64).exp(), max_relative = 1e-14);
        assert_eq!(r[(0, 1)], 0.0);
        assert_eq!(r[(1, 0)], 0.0);
    }

    #[test]
    fn expm_of_skew_matches_taylor() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        // Frozen from the 30-term Taylor oracle: [[cos .5, -sin .5], [sin .5, cos .5]].
        let frozen = Matrix::from_row_slice(
            2,
            2,
            &[
                0.8775825618903728,
                -0.479425538604203,
                0.479425538604203,
                0.8775825618903728,
            ],
        );
        let oracle = taylor_expm(&a, 30);
        assert!((&oracle - &frozen).norm() < 1e-15);
        let r = expm(&a).unwrap();
        assert!((&r - &frozen).norm() / frozen.norm() < 1e-14);
    }

    #[test]
    fn expm_accurate_up_to_norm_ten() {
        // Symmetric input: exact exponential from the eigendecomposition.
        let b = Matrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let sym = (&b + b.transpose()) * 0.5;
        let sym = &sym * (9.5 / sym.norm());
        let eig = sym.clone().symmetric_eigen();
        let exact = &eig.eigenvectors
            * Matrix::from_diagonal(&eig.eigenvalues.map(f64::exp))
            * eig.eigenvectors.transpose();
        let r = expm(&sym).unwrap();
        assert!((&r - &exact).norm() / exact.norm() < 1e-10);
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(expm(&Matrix::zeros(2, 3)), Err(Error::Dimension(_))));
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&a), Err(Error::Domain(_))));
    }

    #[test]
    fn frechet_at_zero_is_direction() {
        let e = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let l = expm_frechet(&Matrix::zeros(2, 2), &e).unwrap();
        assert!((&l - &e).norm() < 1e-14);
    }

    #[test]
    fn frechet_commuting_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.3, -1.2, 2.0]));
        let e = Matrix::from_diagonal(&Vector::from_vec(vec![1.5, 0.7, -0.4]));
        let l = expm_frechet(&a, &e).unwrap();
        for i in 0..3 {
            assert_relative_eq!(l[(i, i)], a[(i, i)].exp() * e[(i, i)], max_relative = 1e-12);
        }
        assert!(l[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn frechet_shape_mismatch() {
        let r = expm_frechet(&Matrix::zeros(2, 2), &Matrix::zeros(3, 3));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn operator_norm_cases() {
        assert_relative_eq!(operator_norm(&Matrix::identity(4, 4)).unwrap(), 1.0, max_relative = 1e-12);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, -5.0]));
        assert_relative_eq!(operator_norm(&d).unwrap(), 5.0, max_relative = 1e-12);
        assert!(matches!(operator_norm(&Matrix::zeros(0, 3)), Err(Error::Domain(_))));
        assert_eq!(operator_norm(&Matrix::zeros(2, 2)).unwrap(), 0.0);
    }

    #[test]
    fn operator_norm_of_rectangular() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        assert_relative_eq!(
            operator_norm(&a).unwrap(),
            svd_max_singular(&a),
            max_relative = 1e-10
        );
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        assert_eq!(frobenius_norm(&Matrix::identity(4, 4)), 2.0);
        assert_eq!(frobenius_norm(&Matrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0])), 5.0);
    }

    #[test]
    fn pinv_drops_tiny_singular_values() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&a, 1e-12);
        let expected = Matrix::from_element(2, 2, 0.25);
        assert!((&p - &expected).norm() < 1e-14);
    }
}
