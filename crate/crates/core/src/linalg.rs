//! Dense matrix arithmetic and L2 normalization with its backward pass.
//!
//! Everything is 64-bit: the gradient checks in this crate run at 1e-4
//! relative tolerance, which 32-bit arithmetic cannot reliably meet.
//! Reductions use a fixed accumulation order (row-major, ascending inner
//! index) so runs with the same seed are bit-reproducible.

use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate zero vectors.
pub const EPS_NORM: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * other`, accumulated row-major with ascending `k`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn transpose_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context: "transpose_matmul inner dimension",
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_transpose(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matmul_transpose inner dimension",
                expected: self.cols,
                got: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }
}

/// Dot product with ascending-index accumulation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit L2 norm. Fails on (near-)zero and non-finite
/// vectors; the NaN case matters because a poisoned norm must not
/// silently pass the threshold test.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n.is_finite() && n > EPS_NORM) {
        return Err(Error::DegenerateNorm {
            norm: n,
            threshold: EPS_NORM,
        });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Vector-Jacobian product of `l2_normalize` at `v`.
///
/// With x = v/|v|, the Jacobian is (I - x x^T)/|v|, so
/// upstream^T J = (upstream - (upstream . x) x) / |v|.
pub fn l2_normalize_vjp(v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != upstream.len() {
        return Err(Error::DimensionMismatch {
            context: "l2_normalize_vjp",
            expected: v.len(),
            got: upstream.len(),
        });
    }
    let n = norm(v);
    if !(n.is_finite() && n > EPS_NORM) {
        return Err(Error::DegenerateNorm {
            norm: n,
            threshold: EPS_NORM,
        });
    }
    let radial = dot(upstream, v) / (n * n);
    Ok(v.iter()
        .zip(upstream)
        .map(|(&vi, &ui)| (ui - radial * vi) / n)
        .collect())
}
