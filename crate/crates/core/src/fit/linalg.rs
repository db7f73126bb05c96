//! Small dense helpers for coefficient blocks (a handful of covariates).

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric positive definite `p x p` matrix.
pub(crate) fn cholesky(a: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Degenerate("matrix is not positive definite".into()));
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L x = b`.
pub(crate) fn solve_lower(l: &[f64], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut x = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            x[i] -= l[i * p + k] * x[k];
        }
        x[i] /= l[i * p + i];
    }
    x
}

/// Solves `L^T x = b`.
pub(crate) fn solve_upper_t(l: &[f64], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut x = b.to_vec();
    for i in (0..p).rev() {
        for k in i + 1..p {
            x[i] -= l[k * p + i] * x[k];
        }
        x[i] /= l[i * p + i];
    }
    x
}

/// Solves `L L^T x = b`.
pub(crate) fn chol_solve(l: &[f64], b: &[f64]) -> Vec<f64> {
    solve_upper_t(l, &solve_lower(l, b))
}

/// `x^T A x` for a dense `p x p` matrix.
pub(crate) fn quad_form(a: &[f64], x: &[f64]) -> f64 {
    let p = x.len();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            s += x[i] * a[i * p + j] * x[j];
        }
    }
    s
}
