//! Dense row-major matrices and the Kruskal (weights + factors) model.

use std::ops::{Index, IndexMut};

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let r = self.cols;
        let mut g = Matrix::zeros(r, r);
        for i in 0..self.rows {
            let row = self.row(i);
            for a in 0..r {
                let ra = row[a];
                let out = g.row_mut(a);
                for b in 0..r {
                    out[b] += ra * row[b];
                }
            }
        }
        g
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs = self.row(i);
            let dst = out.row_mut(i);
            for (k, &a) in lhs.iter().enumerate() {
                for (d, &b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Elementwise product in place.
    pub fn hadamard_assign(&mut self, rhs: &Matrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a *= b;
        }
    }

    /// 2-norms of the columns.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, &x) in sums.iter_mut().zip(self.row(i)) {
                *s += x * x;
            }
        }
        sums.into_iter().map(f64::sqrt).collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A rank-`R` CP model: `X ≈ Σ_r weights[r] · a_r^(0) ∘ … ∘ a_r^(d-1)`
/// where `a_r^(m)` is column `r` of `factors[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    pub weights: Vec<f64>,
    pub factors: Vec<Matrix>,
}

impl KruskalModel {
    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// Model value at one coordinate.
    pub fn value_at(&self, coord: &[u64]) -> f64 {
        (0..self.rank())
            .map(|r| {
                self.factors
                    .iter()
                    .zip(coord)
                    .fold(self.weights[r], |acc, (f, &i)| acc * f[(i as usize, r)])
            })
            .sum()
    }

    /// `‖model‖²` from the factor Gram matrices.
    pub fn norm_squared(&self) -> f64 {
        let r = self.rank();
        let mut h = Matrix::filled(r, r, 1.0);
        for f in &self.factors {
            h.hadamard_assign(&f.gram());
        }
        let mut total = 0.0;
        for a in 0..r {
            for b in 0..r {
                total += self.weights[a] * self.weights[b] * h[(a, b)];
            }
        }
        total
    }

    /// Whether the shapes agree with each other.
    pub fn is_consistent(&self) -> bool {
        self.factors.iter().all(|f| f.cols() == self.rank())
    }

    /// Bitwise equality, distinguishing `-0.0`/`0.0` and NaN payloads.
    pub fn bit_identical(&self, other: &KruskalModel) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        same(&self.weights, &other.weights)
            && self.factors.len() == other.factors.len()
            && self.factors.iter().zip(&other.factors).all(|(a, b)| {
                a.rows() == b.rows() && a.cols() == b.cols() && same(a.as_slice(), b.as_slice())
            })
    }
}
