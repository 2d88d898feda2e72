//! Small dense linear-algebra kernels.
//!
//! Matrices hold their entries in single precision; every product accumulates
//! in `f64`. Sensing matrices are the only large operands and the kernels are
//! bandwidth-bound, so halving the storage roughly halves their cost.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix with `f32` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Entries are rounded to `f32`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::from_f32(rows, cols, data.into_iter().map(|v| v as f32).collect())
    }

    pub fn from_f32(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        f64::from(self.data[r * self.cols + c])
    }

    /// First `rows` rows as a new matrix.
    pub fn top_rows(&self, rows: usize) -> Matrix {
        assert!(rows <= self.rows);
        Matrix::from_f32(rows, self.cols, self.data[..rows * self.cols].to_vec())
    }

    pub fn view(&self) -> MatRef<'_> {
        MatRef { rows: self.rows, cols: self.cols, data: &self.data }
    }

    /// Borrow of the first `rows` rows.
    pub fn prefix(&self, rows: usize) -> MatRef<'_> {
        assert!(rows <= self.rows, "prefix of {rows} rows from {}", self.rows);
        MatRef { rows, cols: self.cols, data: &self.data[..rows * self.cols] }
    }

    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        self.view().mul_vec_into(x, out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.view().mul_vec(x)
    }

    pub fn mul_t_vec_into(&self, y: &[f64], out: &mut [f64]) {
        self.view().mul_t_vec_into(y, out)
    }

    pub fn mul_t_vec(&self, y: &[f64]) -> Vec<f64> {
        self.view().mul_t_vec(y)
    }

    pub fn mul_sparse(&self, nonzeros: &[(usize, f64)]) -> Vec<f64> {
        self.view().mul_sparse(nonzeros)
    }

    pub fn select_columns(&self, support: &[usize]) -> Matrix {
        self.view().select_columns(support)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.view().frobenius_sq()
    }

    pub fn op_norm_sq(&self, iters: usize) -> f64 {
        self.view().op_norm_sq(iters)
    }
}

/// Borrowed row-major matrix, typically a row prefix of a larger one.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f32],
}

impl<'a> MatRef<'a> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        f64::from(self.data[r * self.cols + c])
    }

    pub fn row(&self, r: usize) -> &'a [f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_owned(&self) -> Matrix {
        Matrix::from_f32(self.rows, self.cols, self.data.to_vec())
    }

    /// `out = A x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot_mixed(row, x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out = A^T y`.
    pub fn mul_t_vec_into(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                axpy_mixed(yi, row, out);
            }
        }
    }

    pub fn mul_t_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.mul_t_vec_into(y, &mut out);
        out
    }

    /// `A x` for a vector given by its nonzero `(index, value)` pairs.
    pub fn mul_sparse(&self, nonzeros: &[(usize, f64)]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| nonzeros.iter().map(|&(j, v)| f64::from(row[j]) * v).sum())
            .collect()
    }

    /// Columns listed in `support`, as an `rows x support.len()` matrix.
    pub fn select_columns(&self, support: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * support.len());
        for row in self.data.chunks_exact(self.cols) {
            data.extend(support.iter().map(|&j| row[j]));
        }
        Matrix::from_f32(self.rows, support.len(), data)
    }

    /// Entries widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    /// Estimate of the squared spectral norm by power iteration on `A^T A`.
    pub fn op_norm_sq(&self, iters: usize) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        // Deterministic start vector with no special alignment to any basis direction.
        let mut v: Vec<f64> = (0..self.cols).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let mut av = vec![0.0; self.rows];
        let mut lambda = 0.0;
        for _ in 0..iters.max(1) {
            self.mul_vec_into(&v, &mut av);
            self.mul_t_vec_into(&av, &mut v);
            let n = norm(&v);
            if n == 0.0 {
                return 0.0;
            }
            let prev = lambda;
            lambda = n;
            v.iter_mut().for_each(|x| *x /= n);
            if (lambda - prev).abs() <= 1e-9 * lambda {
                break;
            }
        }
        lambda
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
pub fn dot_mixed(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| f64::from(*x) * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += f64::from(x[k]) * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
pub fn axpy_mixed(alpha: f64, x: &[f32], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * f64::from(*xi);
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_definition() {
        let a = Matrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.mul_vec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.mul_t_vec(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
        assert_eq!(a.mul_sparse(&[(2, 2.0)]), vec![6.0, 12.0]);
        assert_eq!(a.select_columns(&[2, 0]).as_slice(), &[3.0, 1.0, 6.0, 4.0]);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let a = Matrix::from_row_major(2, 2, vec![3.0, 0.0, 0.0, 1.0]);
        assert!((a.op_norm_sq(200) - 9.0).abs() < 1e-6);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let expect: f64 = a.iter().map(|x| x * x).sum();
        assert_eq!(dot(&a, &a), expect);
    }
}
