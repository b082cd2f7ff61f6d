//! Finite partitions of the sensitive space.
//!
//! Dyadic cells are half-open `[a, b)` along every axis, except that the top
//! edge of the domain belongs to the last cell. Cell indices are the
//! mixed-radix code of the per-axis bins with the first axis most
//! significant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Partition {
    /// One cell per listed sensitive value (vectors compared exactly).
    Categorical { values: Vec<Vec<f64>> },
    /// `side^d` axis-aligned cubes over the box `[lo, hi]`.
    Dyadic {
        lo: Vec<f64>,
        hi: Vec<f64>,
        side: usize,
    },
}

/// Result of a clamped assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clamped {
    pub cell: usize,
    pub clamped: bool,
}

impl Partition {
    pub fn dyadic(lo: Vec<f64>, hi: Vec<f64>, side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::input("dyadic partition needs at least one cell per axis"));
        }
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::input(format!(
                "dyadic bounds must be non-empty and of equal length ({} vs {})",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::input(format!(
                "dyadic bounds need lo < hi componentwise, got {lo:?} / {hi:?}"
            )));
        }
        (side as u64)
            .checked_pow(lo.len() as u32)
            .filter(|&c| c <= u32::MAX as u64)
            .ok_or_else(|| Error::input("too many dyadic cells"))?;
        Ok(Partition::Dyadic { lo, hi, side })
    }

    pub fn categorical(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("categorical partition needs at least one value"));
        }
        let dim = values[0].len();
        for (i, v) in values.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if values[..i].contains(v) {
                return Err(Error::input(format!("duplicate categorical value {v:?}")));
            }
        }
        Ok(Partition::Categorical { values })
    }

    /// Categorical partition over the distinct rows of `s`, in first-seen order.
    pub fn categorical_from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut values: Vec<Vec<f64>> = Vec::new();
        for r in rows {
            if !values.iter().any(|v| v.as_slice() == r) {
                values.push(r.to_vec());
            }
        }
        Self::categorical(values)
    }

    /// A single cell covering the whole box, so conditional and global means coincide.
    pub fn single_cell(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        Self::dyadic(lo, hi, 1)
    }

    pub fn dim(&self) -> usize {
        match self {
            Partition::Categorical { values } => values[0].len(),
            Partition::Dyadic { lo, .. } => lo.len(),
        }
    }

    pub fn cell_count(&self) -> usize {
        match self {
            Partition::Categorical { values } => values.len(),
            Partition::Dyadic { lo, side, .. } => side.pow(lo.len() as u32),
        }
    }

    /// Cell containing `s`; out-of-domain values are an error.
    pub fn assign(&self, s: &[f64]) -> Result<usize> {
        match self.locate(s)? {
            Clamped { cell, clamped: false } => Ok(cell),
            _ => Err(Error::Assignment { value: s.to_vec() }),
        }
    }

    /// Cell containing `s`, moving out-of-domain dyadic values to the nearest cell.
    ///
    /// Categorical values outside the list have no nearest cell and still error.
    pub fn assign_clamped(&self, s: &[f64]) -> Result<Clamped> {
        self.locate(s)
    }

    fn locate(&self, s: &[f64]) -> Result<Clamped> {
        if s.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: s.len(),
            });
        }
        match self {
            Partition::Categorical { values } => values
                .iter()
                .position(|v| v.as_slice() == s)
                .map(|cell| Clamped { cell, clamped: false })
                .ok_or_else(|| Error::Assignment { value: s.to_vec() }),
            Partition::Dyadic { lo, hi, side } => {
                if s.iter().any(|v| v.is_nan()) {
                    return Err(Error::Assignment { value: s.to_vec() });
                }
                let mut cell = 0usize;
                let mut clamped = false;
                for k in 0..s.len() {
                    let width = (hi[k] - lo[k]) / *side as f64;
                    let raw = ((s[k] - lo[k]) / width).floor();
                    if s[k] < lo[k] || s[k] > hi[k] {
                        clamped = true;
                    }
                    let bin = if raw < 0.0 {
                        0
                    } else {
                        (raw as usize).min(side - 1)
                    };
                    cell = cell * side + bin;
                }
                Ok(Clamped { cell, clamped })
            }
        }
    }

    /// Lower/upper corner of a dyadic cell (`None` for categorical partitions).
    pub fn cell_bounds(&self, cell: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Partition::Categorical { .. } => None,
            Partition::Dyadic { lo, hi, side } => {
                let d = lo.len();
                let mut bins = vec![0usize; d];
                let mut rest = cell;
                for k in (0..d).rev() {
                    bins[k] = rest % side;
                    rest /= side;
                }
                let mut a = Vec::with_capacity(d);
                let mut b = Vec::with_capacity(d);
                for k in 0..d {
                    let width = (hi[k] - lo[k]) / *side as f64;
                    a.push(lo[k] + bins[k] as f64 * width);
                    b.push(if bins[k] + 1 == *side {
                        hi[k]
                    } else {
                        lo[k] + (bins[k] + 1) as f64 * width
                    });
                }
                Some((a, b))
            }
        }
    }
}

/// Running count of sensitive values that had to be clamped into the domain.
#[derive(Debug, Default)]
pub struct ClampTally {
    count: std::sync::atomic::AtomicUsize,
}

impl ClampTally {
    pub fn record(&self, c: Clamped) -> usize {
        if c.clamped {
            self.count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        c.cell
    }

    pub fn count(&self) -> usize {
        self.count.load(std::sync::atomic::Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dyadic_examples() {
        let p = Partition::dyadic(vec![-5.0], vec![5.0], 16).unwrap();
        assert_eq!(p.cell_count(), 16);
        let (a, b) = p.cell_bounds(3).unwrap();
        assert!((b[0] - a[0] - 0.625).abs() < 1e-15);

        let whole = Partition::dyadic(vec![0.0], vec![1.0], 1).unwrap();
        assert_eq!(whole.cell_count(), 1);
        assert_eq!(whole.assign(&[0.0]).unwrap(), 0);
        assert_eq!(whole.assign(&[1.0]).unwrap(), 0);

        let sq = Partition::dyadic(vec![0.0, 0.0], vec![1.0, 1.0], 2).unwrap();
        assert_eq!(sq.cell_count(), 4);
        assert_eq!(sq.assign(&[0.75, 0.25]).unwrap(), 2);
        assert_eq!(sq.assign(&[0.25, 0.75]).unwrap(), 1);
    }

    #[test]
    fn boundary_ownership() {
        let p = Partition::dyadic(vec![-5.0], vec![5.0], 16).unwrap();
        assert_eq!(p.assign(&[-5.0]).unwrap(), 0);
        assert_eq!(p.assign(&[5.0]).unwrap(), 15);
        // interior edges open at the top
        assert_eq!(p.assign(&[-5.0 + 0.625]).unwrap(), 1);
    }

    #[test]
    fn categorical_assign() {
        let p = Partition::categorical(vec![vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(p.assign(&[1.0]).unwrap(), 1);
        assert_eq!(p.assign(&[0.0]).unwrap(), 0);
        assert!(matches!(p.assign(&[2.0]), Err(Error::Assignment { .. })));
        assert!(Partition::categorical(vec![vec![0.0], vec![0.0]]).is_err());
    }

    #[test]
    fn bad_construction() {
        assert!(Partition::dyadic(vec![0.0], vec![1.0], 0).is_err());
        assert!(Partition::dyadic(vec![1.0], vec![1.0], 2).is_err());
        assert!(Partition::dyadic(vec![0.0, 2.0], vec![1.0, 1.0], 2).is_err());
    }

    #[test]
    fn out_of_domain_errors_and_clamps() {
        let p = Partition::dyadic(vec![-5.0], vec![5.0], 16).unwrap();
        match p.assign(&[5.5]) {
            Err(Error::Assignment { value }) => assert_eq!(value, vec![5.5]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.assign_clamped(&[5.5]).unwrap(), Clamped { cell: 15, clamped: true });
        assert_eq!(p.assign_clamped(&[-80.0]).unwrap(), Clamped { cell: 0, clamped: true });
        assert_eq!(p.assign_clamped(&[0.1]).unwrap(), Clamped { cell: 8, clamped: false });
        assert!(p.assign(&[f64::NAN]).is_err());

        let tally = ClampTally::default();
        for s in [-6.0, 0.0, 7.0] {
            tally.record(p.assign_clamped(&[s]).unwrap());
        }
        assert_eq!(tally.count(), 2);
    }

    #[test]
    fn grid_covered_exactly_once() {
        let p = Partition::dyadic(vec![0.0, -1.0], vec![1.0, 1.0], 4).unwrap();
        let mut counts = vec![0usize; p.cell_count()];
        let g = 100;
        for i in 0..g {
            for j in 0..g {
                let s = [i as f64 / (g - 1) as f64, -1.0 + 2.0 * j as f64 / (g - 1) as f64];
                let cell = p.assign(&s).unwrap();
                counts[cell] += 1;
                let (a, b) = p.cell_bounds(cell).unwrap();
                for k in 0..2 {
                    assert!(a[k] <= s[k] && s[k] <= b[k]);
                }
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), g * g);
        assert!(counts.iter().all(|&c| c > 0));
    }

    proptest! {
        #[test]
        fn assignment_total_on_domain(side in 1usize..20, s in -5.0f64..=5.0) {
            let p = Partition::dyadic(vec![-5.0], vec![5.0], side).unwrap();
            let cell = p.assign(&[s]).unwrap();
            prop_assert!(cell < side);
            let (a, b) = p.cell_bounds(cell).unwrap();
            prop_assert!(a[0] <= s && s <= b[0]);
        }
    }
}
