//! Small dense linear algebra on row-major `Vec<f64>` buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::{math, Error, Result};

/// Solve `A x = b` for symmetric positive definite `A` (n x n, row-major)
/// by Cholesky factorization. `b` holds `m` right-hand sides as an n x m
/// row-major matrix; the solution has the same layout.
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64], m: usize) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n * m {
        return Err(Error::shape("cholesky_solve: operand sizes"));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numerical("matrix is not positive definite".into()));
                }
                l[i * n + i] = math::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut x = b.to_vec();
    for col in 0..m {
        // forward: L y = b
        for i in 0..n {
            let mut s = x[i * m + col];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + col];
            }
            x[i * m + col] = s / l[i * n + i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = x[i * m + col];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k * m + col];
            }
            x[i * m + col] = s / l[i * n + i];
        }
    }
    Ok(x)
}

/// Dot product with four independent partial sums so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += W x` for a row-major `rows x cols` matrix.
#[inline]
pub fn gemv_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, out) in y.iter_mut().enumerate().take(rows) {
        *out += dot(&w[r * cols..(r + 1) * cols], &x[..cols]);
    }
}

/// `x_grad += W^T g` for a row-major `rows x cols` matrix.
#[inline]
pub fn gemv_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], x_grad: &mut [f64]) {
    for (r, &gr) in g.iter().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        for (xg, a) in x_grad.iter_mut().zip(row) {
            *xg += a * gr;
        }
    }
}

/// `W_grad += g x^T`.
#[inline]
pub fn outer_acc(w_grad: &mut [f64], rows: usize, cols: usize, g: &[f64], x: &[f64]) {
    for (r, &gr) in g.iter().enumerate().take(rows) {
        let row = &mut w_grad[r * cols..(r + 1) * cols];
        for (wg, b) in row.iter_mut().zip(x) {
            *wg += gr * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_small_system() {
        // A = [[4,2],[2,3]], b = [2, 1] -> x = [0.5, 0]
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, 2, &[2.0, 1.0], 1).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_solve(&a, 2, &[1.0, 1.0], 1).is_err());
    }
}
