//! Kernel functions and Gram matrices.
//!
//! Every feature map in this crate is implicit: `φ(x) = k(x, ·)`, and all
//! Hilbert-space quantities reduce to evaluations of [`KernelSpec::eval`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `⟨x, y⟩`
    Linear,
    /// `(⟨x, y⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(-‖x - y‖² / (2σ²))`
    Rbf { sigma: f64 },
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        let spec = KernelSpec::Polynomial { degree, offset };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    return Err(Error::input("polynomial degree must be >= 1"));
                }
                if !(offset >= 0.0 && offset.is_finite()) {
                    return Err(Error::input(format!(
                        "polynomial offset must be finite and >= 0, got {offset}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Rbf { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::input(format!("rbf sigma must be > 0, got {sigma}")));
                }
                Ok(())
            }
        }
    }

    /// Evaluates `k(x, y)`, checking dimensions.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluates `k(x, y)` assuming `x.len() == y.len()`.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, offset } => (dot(x, y) + offset).powi(degree as i32),
            KernelSpec::Rbf { sigma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Upper bound on `‖φ(x)‖ = sqrt(k(x, x))` over the box `[lo, hi]`.
    ///
    /// For the rbf kernel this is exactly 1. For the dot-product kernels
    /// `k(x, x)` grows with `‖x‖`, whose maximum over a box sits at a corner.
    pub fn feature_norm_bound(&self, lo: &[f64], hi: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { .. } => 1.0,
            _ => {
                let corner: Vec<f64> = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| if a.abs() > b.abs() { *a } else { *b })
                    .collect();
                self.eval_unchecked(&corner, &corner).max(0.0).sqrt()
            }
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// One-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Contiguous row range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        self.row_iter()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let eig = nalgebra::SymmetricEigen::new(self.to_nalgebra());
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_cols(x: &Matrix, x2: &Matrix) -> Result<()> {
    if x.cols() != x2.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: x2.cols(),
        });
    }
    Ok(())
}

/// Cross-Gram matrix `K[i][j] = k(x_i, x2_j)`.
pub fn gram(spec: &KernelSpec, x: &Matrix, x2: &Matrix) -> Result<Matrix> {
    check_cols(x, x2)?;
    let m = x2.rows();
    let data: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = x.row(i);
            (0..m).map(move |j| spec.eval_unchecked(xi, x2.row(j)))
        })
        .collect();
    Matrix::from_row_major(x.rows(), m, data)
}

/// Self-Gram `K[i][j] = k(x_i, x_j)`; the upper triangle is computed and
/// mirrored, so the result is bitwise symmetric.
pub fn self_gram(spec: &KernelSpec, x: &Matrix) -> Matrix {
    let n = x.rows();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (i..n).map(|j| spec.eval_unchecked(xi, x.row(j))).collect()
        })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            out.set(i, i + off, v);
            out.set(i + off, i, v);
        }
    }
    out
}
