//! Small dense linear algebra for Newton steps (p is the number of predictors,
//! at most a few dozen).

use ndarray::{Array1, Array2};

use crate::scalar::Real;

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky
/// factorisation. Returns `None` when `a` is not numerically positive definite.
pub fn cholesky_solve<F: Real>(a: &Array2<F>, b: &Array1<F>) -> Option<Array1<F>> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.len(), n);
    let mut l = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > F::zero()) || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut y = Array1::<F>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<F>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}

/// Ordinary least squares with a tiny ridge for numerical stability. Returns
/// the coefficient vector for the columns of `x` (include a column of ones
/// for an intercept).
pub fn least_squares(x: &Array2<f64>, y: &Array1<f64>, ridge: f64) -> Option<Array1<f64>> {
    let xtx = x.t().dot(x);
    let mut xtx = xtx;
    for i in 0..xtx.nrows() {
        xtx[[i, i]] += ridge;
    }
    let xty = x.t().dot(y);
    cholesky_solve(&xtx, &xty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&a, &b).unwrap();
        let r: Array1<f64> = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_solve(&a, &array![1.0, 1.0]).is_none());
    }

    #[test]
    fn works_in_f32() {
        let a = array![[2.0f32, 0.5], [0.5, 1.0]];
        let x = cholesky_solve(&a, &array![1.0f32, 1.0]).unwrap();
        assert!((a.dot(&x)[0] - 1.0).abs() < 1e-5);
    }
}
