//! Dense linear algebra for small symmetric positive-definite systems.
//!
//! Everything here works on `ndarray` matrices of modest dimension (i-vector
//! and PLDA sizes), so a plain Cholesky factorization is all that is needed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{numerical_err, Result};

/// Lower-triangular Cholesky factor L with A = L L^T.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return numerical_err("cholesky requires a square matrix");
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return numerical_err(format!(
                        "matrix not positive definite at pivot {i} (value {sum:.3e})"
                    ));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b given the Cholesky factor of A.
pub fn cho_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solve A x = b for symmetric positive-definite A.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a)?;
    Ok(cho_solve(&l, b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::zeros((n, n));
    let mut e = Array1::zeros(n);
    for i in 0..n {
        e.fill(0.0);
        e[i] = 1.0;
        inv.column_mut(i).assign(&cho_solve(&l, e.view()));
    }
    Ok(inv)
}

/// log(det(A)) for symmetric positive-definite A.
pub fn spd_logdet(a: ArrayView2<f64>) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..a.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        m.t().dot(&m) + Array2::<f64>::eye(n) * 0.5
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random_spd(6, 1);
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in a.iter().zip(back.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn solve_matches_direct_substitution() {
        let a = arr2(&[[4.0, 1.0], [1.0, 3.0]]);
        let b = ndarray::arr1(&[1.0, 2.0]);
        let x = solve_spd(a.view(), b.view()).unwrap();
        let r = a.dot(&x);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = random_spd(5, 7);
        let inv = spd_inverse(a.view()).unwrap();
        let id = a.dot(&inv);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(id[[i, j]], want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn logdet_matches_2x2_formula() {
        let a = arr2(&[[3.0, 1.0], [1.0, 2.0]]);
        let want = (3.0f64 * 2.0 - 1.0).ln();
        assert_abs_diff_eq!(spd_logdet(a.view()).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_a_numerical_error() {
        let a = arr2(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(cholesky(a.view()).is_err());
    }
}
