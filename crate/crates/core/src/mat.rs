//! Minimal row-major `f64` matrix used throughout the core.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::mathx::EPS_NORM;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(alloc::format!(
                "expected {}x{}={} elements, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Build from a slice of rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(shape_err("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    /// `self · other`, (m×k)·(k×n) → m×n.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dims");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            let o = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = a_row[p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for j in 0..n {
                    o[j] += a * b_row[j];
                }
            }
        }
        out
    }

    /// `self · otherᵀ`, (m×k)·(n×k)ᵀ → m×n.
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt dims");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let a_row = self.row(i);
            for j in 0..n {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a_row[p] * b_row[p];
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    /// `selfᵀ · other`, (k×m)ᵀ·(k×n) → m×n.
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_tn dims");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Mat::zeros(m, n);
        for p in 0..k {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for i in 0..m {
                let a = a_row[i];
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    o[j] += a * b_row[j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!(self.data.len(), other.data.len(), "add_scaled dims");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    /// ℓ2 norms of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                let r = self.row(i);
                libm::sqrt(r.iter().map(|x| x * x).sum::<f64>())
            })
            .collect()
    }

    /// Rows divided by `max(‖row‖, ε)`; returns the normalized matrix and the
    /// pre-normalization norms (needed for the backward pass).
    pub fn normalize_rows(&self) -> (Mat, Vec<f64>) {
        let norms = self.row_norms();
        let mut out = self.clone();
        for i in 0..out.rows {
            let d = norms[i].max(EPS_NORM);
            for x in out.row_mut(i) {
                *x /= d;
            }
        }
        (out, norms)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Backward of row normalization `y = x / max(‖x‖, ε)`.
///
/// Inside the guard (`‖x‖ ≤ ε`) the map is linear with slope `1/ε`.
pub fn normalize_rows_backward(d_out: &Mat, normalized: &Mat, norms: &[f64]) -> Mat {
    let mut d_in = Mat::zeros(d_out.rows, d_out.cols);
    for i in 0..d_out.rows {
        let dy = d_out.row(i);
        let y = normalized.row(i);
        let n = norms[i];
        let dst = d_in.row_mut(i);
        if n > EPS_NORM {
            let dot: f64 = dy.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            for j in 0..dy.len() {
                dst[j] = (dy[j] - dot * y[j]) / n;
            }
        } else {
            for j in 0..dy.len() {
                dst[j] = dy[j] / EPS_NORM;
            }
        }
    }
    d_in
}
