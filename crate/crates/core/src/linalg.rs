//! Small dense solvers for symmetric positive definite systems.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// In-place lower Cholesky factor of `a`. Returns `None` if `a` is not
/// numerically positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let d = diag.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the lower factor `l`.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves the SPD system `a x = b`.
pub fn solve_spd(a: &Array2<f64>, b: ArrayView1<f64>) -> Option<Array1<f64>> {
    cholesky(a).map(|l| cholesky_solve(&l, b))
}

/// Least squares `min ‖design·β − y‖²` through the normal equations with a
/// ridge `jitter` added to the diagonal.
pub fn least_squares(design: ArrayView2<f64>, y: ArrayView1<f64>, jitter: f64) -> Result<Array1<f64>> {
    if design.nrows() != y.len() {
        return Err(Error::Shape { expected: design.nrows(), actual: y.len() });
    }
    let mut gram = design.t().dot(&design);
    for i in 0..gram.nrows() {
        gram[[i, i]] += jitter;
    }
    let rhs = design.t().dot(&y);
    let beta = solve_spd(&gram, rhs.view())
        .ok_or_else(|| Error::Numeric("normal equations are rank deficient".into()))?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("least squares produced non-finite coefficients".into()));
    }
    Ok(beta)
}

/// Appends a column of ones.
pub fn with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    let ones = Array2::<f64>::ones((x.nrows(), 1));
    ndarray::concatenate(Axis(1), &[x, ones.view()]).expect("row counts agree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let x_true = array![1.0, -2.0, 0.5];
        let b = a.dot(&x_true);
        let x = solve_spd(&a, b.view()).unwrap();
        for (u, v) in x.iter().zip(x_true.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn exact_linear_fit() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = array![1.0, 3.0, 5.0, 7.0];
        let beta = least_squares(with_intercept(x.view()).view(), y.view(), 0.0).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12 && (beta[1] - 1.0).abs() < 1e-12);
    }
}
