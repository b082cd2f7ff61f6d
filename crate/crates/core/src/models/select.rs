use crate::error::{Error, Result};

/// Outcome of a validation sweep over a regularisation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub value: f64,
    pub loss: f64,
    /// `(grid value, validation loss)` in grid order.
    pub losses: Vec<(f64, f64)>,
}

/// Picks the grid value with the lowest validation loss; ties go to the
/// smallest value.
pub fn select_reg<F>(grid: &[f64], mut validation_loss: F) -> Result<Selection>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::input("regularisation grid is empty"));
    }
    let mut losses = Vec::with_capacity(grid.len());
    for &v in grid {
        let loss = validation_loss(v)?;
        if loss.is_nan() {
            return Err(Error::Numerical(format!("validation loss is NaN at {v}")));
        }
        losses.push((v, loss));
    }
    let (value, loss) = losses
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 < best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .expect("grid is non-empty");
    Ok(Selection { value, loss, losses })
}

/// `2^lo, 2^(lo+1), …, 2^hi`.
pub fn power_of_two_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(e)).collect()
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// Fraction of sign disagreements between decision values and `±1` labels;
/// a zero decision counts as `+1`.
pub fn zero_one(decision: &[f64], y: &[f64]) -> f64 {
    let wrong = decision
        .iter()
        .zip(y)
        .filter(|(d, t)| (if **d >= 0.0 { 1.0 } else { -1.0 }) != **t)
        .count();
    wrong as f64 / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_two_endpoints() {
        let g = power_of_two_grid(-5, 5);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 1.0 / 32.0);
        assert_eq!(g[10], 32.0);
    }

    #[test]
    fn single_element_grid() {
        let s = select_reg(&[0.7], |_| Ok(3.0)).unwrap();
        assert_eq!(s.value, 0.7);
    }

    #[test]
    fn ties_pick_smallest() {
        let s = select_reg(&[4.0, 1.0, 2.0], |v| Ok(if v == 4.0 { 0.5 } else { 0.1 })).unwrap();
        assert_eq!(s.value, 1.0);
        let s = select_reg(&[2.0, 1.0], |_| Ok(0.3)).unwrap();
        assert_eq!(s.value, 1.0);
    }

    #[test]
    fn minimum_wins() {
        let s = select_reg(&power_of_two_grid(-2, 2), |v| Ok((v - 2.0).abs())).unwrap();
        assert_eq!(s.value, 2.0);
        assert_eq!(s.losses.len(), 5);
    }

    #[test]
    fn empty_grid_errors() {
        assert!(select_reg(&[], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn losses() {
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]), 2.5);
        assert_eq!(zero_one(&[0.5, -0.1, 0.0], &[1.0, 1.0, -1.0]), 2.0 / 3.0);
    }
}
