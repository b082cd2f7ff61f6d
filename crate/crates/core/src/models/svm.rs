//! Soft-margin SVM dual solved by SMO on a precomputed Gram matrix.
//!
//! Working-set selection uses second-order information (maximal violating
//! `i`, then the `j` with the largest guaranteed objective decrease). Any
//! symmetric PSD matrix is accepted, so the oblivious Gram drops in for `K`.

use crate::error::{Error, Result};
use crate::kernel::Matrix;

const TAU: f64 = 1e-12;

/// Default KKT-violation tolerance for [`fit_svm`].
pub const SVM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    /// Dual variables, `0 ≤ α_i ≤ C`.
    pub alphas: Vec<f64>,
    pub intercept: f64,
    /// Whether the KKT violation fell below tolerance within the pass budget.
    pub converged: bool,
    pub iterations: usize,
}

impl SvmFit {
    /// `Σ α_i y_i g_i + b` for a row `g` of cross products with the training set.
    pub fn decision(&self, labels: &[f64], row: &[f64]) -> f64 {
        self.alphas
            .iter()
            .zip(labels)
            .zip(row)
            .map(|((a, y), g)| a * y * g)
            .sum::<f64>()
            + self.intercept
    }
}

/// Dual objective `Σ α_i - ½ Σ_ij α_i α_j y_i y_j G_ij` (to be maximised).
pub fn dual_objective(g: &Matrix, labels: &[f64], alphas: &[f64]) -> f64 {
    let n = alphas.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alphas[i] * alphas[j] * labels[i] * labels[j] * g.get(i, j);
        }
    }
    alphas.iter().sum::<f64>() - 0.5 * quad
}

/// Trains on labels in `{-1, +1}` with box constraint `C`.
///
/// The solver stops once the maximal KKT violation drops below
/// [`SVM_TOLERANCE`] or after `max_passes · n` pair updates; running out of
/// budget only clears `converged`.
pub fn fit_svm(g: &Matrix, labels: &[f64], c: f64, max_passes: usize) -> Result<SvmFit> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::input("svm needs a square Gram matrix"));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if n == 0 {
        return Err(Error::input("svm needs at least one training point"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::input(format!("svm labels must be -1 or +1, got {bad}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::input(format!("svm C must be > 0, got {c}")));
    }
    let y = labels;
    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα - eᵀα with Q_ij = y_i y_j G_ij
    let mut grad = vec![-1.0; n];
    let budget = max_passes.saturating_mul(n).max(1);
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = g.get(i, i) + g.get(t, t) - 2.0 * g.get(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let score = -b * b / a;
                    if score < best {
                        best = score;
                        j_sel = t;
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < SVM_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let qij = y[i] * y[j] * g.get(i, j);
        let (qii, qjj) = (g.get(i, i), g.get(j, j));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * di * g.get(t, i) + y[j] * dj * g.get(t, j));
        }
    }

    let intercept = -rho(&alpha, &grad, y, c);
    Ok(SvmFit {
        alphas: alpha,
        intercept,
        converged,
        iterations,
    })
}

/// Offset of the decision function from the free support vectors, or the
/// midpoint of the feasible interval when none are free.
fn rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}
