//! Dense `n x r` factor matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Row-major dense `n x r` real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    n: usize,
    r: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            n,
            r,
            data: vec![0.0; n * r],
        }
    }

    /// Panics if `data.len() != n * r`.
    pub fn from_row_major(n: usize, r: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * r, "factor data has wrong length");
        Self { n, r, data }
    }

    pub fn from_column(v: &[f64]) -> Self {
        Self::from_row_major(v.len(), 1, v.to_vec())
    }

    pub fn from_fn(n: usize, r: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * r);
        for i in 0..n {
            for k in 0..r {
                data.push(f(i, k));
            }
        }
        Self { n, r, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, k| m[(i, k)])
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.r, &self.data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.r + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.r + k] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.r..(i + 1) * self.r]
    }

    /// Rows `b*r .. (b+1)*r` as an `r x r` matrix.
    pub fn block(&self, b: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.r, self.r, &self.data[b * self.r * self.r..(b + 1) * self.r * self.r])
    }

    pub fn set_block(&mut self, b: usize, blk: &DMatrix<f64>) {
        for a in 0..self.r {
            for k in 0..self.r {
                self.set(b * self.r + a, k, blk[(a, k)]);
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            r: self.r,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        debug_assert_eq!((self.n, self.r), (other.n, other.r));
        Self {
            n: self.n,
            r: self.r,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    /// Right multiplication by an `r x r` matrix.
    pub fn mul_right(&self, q: &DMatrix<f64>) -> Self {
        Self::from_dmatrix(&(self.to_dmatrix() * q))
    }

    /// `X Xᵀ` materialized.
    pub fn gram(&self) -> DMatrix<f64> {
        let x = self.to_dmatrix();
        &x * x.transpose()
    }

    /// `‖A Aᵀ - B Bᵀ‖_F` without forming `n x n` products: with
    /// `[A B] = Q T`, the difference equals `Q T J Tᵀ Qᵀ`, `J = diag(I, -I)`.
    pub fn product_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.n, other.n);
        let (n, ra, rb) = (self.n, self.r, other.r);
        let c = DMatrix::from_fn(n, ra + rb, |i, k| if k < ra { self.get(i, k) } else { other.get(i, k - ra) });
        let t = c.qr().r();
        let mut tj = t.clone();
        for k in ra..ra + rb {
            tj.column_mut(k).neg_mut();
        }
        (tj * t.transpose()).norm()
    }

    /// `‖X Xᵀ‖_F`.
    pub fn product_norm(&self) -> f64 {
        let a = self.to_dmatrix();
        (a.transpose() * &a).norm()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
