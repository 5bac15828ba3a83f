//! Minimal square-matrix arithmetic for the linear adapters.
//!
//! Adapters are small (D x D with D in the low hundreds), so a plain
//! row-major `Vec<f64>` with sequential accumulation keeps results
//! bit-reproducible across runs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "row-major data must be dim*dim");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    /// `self * v` for a column vector `v` of length `dim`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (row, slot) in out.iter_mut().enumerate() {
            let base = row * self.dim;
            let mut acc = 0.0;
            for (col, x) in v.iter().enumerate() {
                acc += self.data[base + col] * x;
            }
            *slot = acc;
        }
        out
    }

    /// `self += coeff * u * v^T` (rank-one update).
    pub fn add_outer(&mut self, coeff: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.dim);
        debug_assert_eq!(v.len(), self.dim);
        for (row, &ui) in u.iter().enumerate() {
            let scale = coeff * ui;
            let base = row * self.dim;
            for (col, &vj) in v.iter().enumerate() {
                self.data[base + col] += scale * vj;
            }
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &SquareMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
