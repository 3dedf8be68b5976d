//! Dense vector/matrix primitives, normalization, distances, a stable
//! log-sum-exp, and the central finite-difference oracle that every
//! analytic gradient in this crate is checked against.
//!
//! Everything here is pure, `f64`, and reentrant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Cosines are clamped to `[-COS_CLAMP, COS_CLAMP]` before the margin
/// expansion so that `sin = sqrt(1 - cos^2)` never degenerates at exact
/// alignment.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("vector norm {norm:e} at or below {eps:e}")]
    ZeroNorm { norm: f64, eps: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/value length mismatch");
        Mat { rows, cols, data }
    }

    /// Identity matrix (useful in tests and degenerate configs).
    pub fn eye(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies column `c` out (columns are strided in row-major storage).
    pub fn col_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn col_norm(&self, c: usize) -> f64 {
        (0..self.rows)
            .map(|r| self.get(r, c) * self.get(r, c))
            .sum::<f64>()
            .sqrt()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = self * x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| dot(self.row(r), x))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Returns the unit-norm copy of `v` together with the original norm.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, f64), NumericsError> {
    let n = norm(v);
    if n <= NORM_EPS {
        return Err(NumericsError::ZeroNorm {
            norm: n,
            eps: NORM_EPS,
        });
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_dims(a, b)?;
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sq.sqrt())
}

/// Cosine similarity, clamped into [-1, 1] after the division.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na <= NORM_EPS {
        return Err(NumericsError::ZeroNorm {
            norm: na,
            eps: NORM_EPS,
        });
    }
    if nb <= NORM_EPS {
        return Err(NumericsError::ZeroNorm {
            norm: nb,
            eps: NORM_EPS,
        });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `log(sum_j exp(l_j))`, stable under a max shift.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptyInput);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    Ok(m + sum.ln())
}

/// Central-difference gradient estimate of `f` at `x` with step `h`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate. Evaluation errors
/// from `f` propagate out unchanged.
pub fn finite_diff_grad<E>(
    mut f: impl FnMut(&[f64]) -> Result<f64, E>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, E> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe)?;
        probe[i] = orig - h;
        let minus = f(&probe)?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}
