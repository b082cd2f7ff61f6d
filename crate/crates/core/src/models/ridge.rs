//! Dual ridge regression: `α = (G + λI)⁻¹ y` by Cholesky factorisation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::Matrix;

/// Solves `(G + λI) α = y` for a symmetric positive semi-definite `G`.
///
/// Tiny negative eigenvalues of `G` from round-off are absorbed by `λ`; no
/// projection onto the PSD cone is attempted.
pub fn fit_ridge(g: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::input(format!("ridge needs a square matrix, got {}x{}", n, g.cols())));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::input(format!("ridge parameter must be > 0, got {lambda}")));
    }
    if !g.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in ridge system".into()));
    }
    let mut a = DMatrix::from_row_slice(n, n, g.as_slice());
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let rhs = DVector::from_column_slice(y);
    let chol = a.clone().cholesky().ok_or_else(|| {
        let min_diag = (0..n).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min);
        Error::Numerical(format!(
            "cholesky failed for n={n}, lambda={lambda}, min diagonal {min_diag:e}, trace {:e}",
            g.trace()
        ))
    })?;
    let alpha = chol.solve(&rhs);
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "ridge solution not finite (n={n}, lambda={lambda})"
        )));
    }
    let residual = (&a * &alpha - &rhs).norm();
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    if residual > 1e-8 * scale {
        let eig = nalgebra::SymmetricEigen::new(a);
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        return Err(Error::Numerical(format!(
            "ridge residual {residual:e} exceeds tolerance; condition estimate {:e}",
            hi / lo
        )));
    }
    Ok(alpha.iter().copied().collect())
}

/// Gradient of `‖Gα - y‖² + λ αᵀGα` with respect to `α`.
pub fn ridge_objective_gradient(g: &Matrix, y: &[f64], lambda: f64, alpha: &[f64]) -> Vec<f64> {
    let ga = g.mat_vec(alpha);
    let r: Vec<f64> = ga.iter().zip(y).map(|(a, b)| a - b).collect();
    let gr = g.mat_vec(&r);
    gr.iter().zip(&ga).map(|(a, b)| 2.0 * a + 2.0 * lambda * b).collect()
}
