//! Plug-in estimator of the conditional mean embedding `E[φ(X) | S ∈ A_u]`.
//!
//! Each cell mean is the uniform average of the anchor feature maps that fall
//! into the cell (the zero element when the cell is empty), and the global mean
//! is the uniform average over all anchors. Nothing is stored in feature space:
//! every inner product is a double or single average of kernel evaluations.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Matrix};
use crate::partition::Partition;

/// Kernel sums of one probe point against the anchors, bucketed by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorProfile {
    /// `Σ_{j ∈ I_u} k(x, x_j)` for each cell `u`.
    pub cell_sums: Vec<f64>,
    /// `Σ_j k(x, x_j)` over all anchors.
    pub total: f64,
}

#[derive(Debug)]
struct CellAggregates {
    /// `⟨Ê(φ|A_u), Ê(φ|A_v)⟩`, row-major `cells × cells`, bitwise symmetric.
    o: Vec<f64>,
    /// `⟨Ê(φ|A_u), Ê(φ)⟩`
    tau: Vec<f64>,
    /// `‖Ê(φ)‖²`
    big_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(into = "EstimatorRecord", try_from = "EstimatorRecord")]
pub struct CondMeanEstimator {
    kernel: KernelSpec,
    partition: Partition,
    anchors_x: Matrix,
    anchors_s: Matrix,
    anchors_cell: Vec<usize>,
    members: Vec<Vec<usize>>,
    aggregates: OnceLock<CellAggregates>,
}

impl Clone for CondMeanEstimator {
    fn clone(&self) -> Self {
        CondMeanEstimator {
            kernel: self.kernel,
            partition: self.partition.clone(),
            anchors_x: self.anchors_x.clone(),
            anchors_s: self.anchors_s.clone(),
            anchors_cell: self.anchors_cell.clone(),
            members: self.members.clone(),
            aggregates: OnceLock::new(),
        }
    }
}

impl PartialEq for CondMeanEstimator {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.partition == other.partition
            && self.anchors_x == other.anchors_x
            && self.anchors_s == other.anchors_s
    }
}

/// On-disk form of the estimator; cell membership is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub kernel: KernelSpec,
    pub partition: Partition,
    pub anchors_x: Matrix,
    pub anchors_s: Matrix,
}

impl From<CondMeanEstimator> for EstimatorRecord {
    fn from(e: CondMeanEstimator) -> Self {
        EstimatorRecord {
            kernel: e.kernel,
            partition: e.partition,
            anchors_x: e.anchors_x,
            anchors_s: e.anchors_s,
        }
    }
}

impl TryFrom<EstimatorRecord> for CondMeanEstimator {
    type Error = Error;

    fn try_from(r: EstimatorRecord) -> Result<Self> {
        CondMeanEstimator::fit(r.kernel, r.partition, r.anchors_x, r.anchors_s)
    }
}

impl CondMeanEstimator {
    /// Assigns every anchor to its cell. No kernel evaluations happen here.
    pub fn fit(kernel: KernelSpec, partition: Partition, x: Matrix, s: Matrix) -> Result<Self> {
        kernel.validate()?;
        if x.rows() == 0 {
            return Err(Error::input("conditional mean estimator needs at least one anchor"));
        }
        if x.rows() != s.rows() {
            return Err(Error::input(format!(
                "anchor features have {} rows but sensitive features have {}",
                x.rows(),
                s.rows()
            )));
        }
        if x.cols() == 0 {
            return Err(Error::input("anchor features need at least one column"));
        }
        let mut members = vec![Vec::new(); partition.cell_count()];
        let mut anchors_cell = Vec::with_capacity(x.rows());
        for (j, sj) in s.row_iter().enumerate() {
            let u = partition.assign(sj)?;
            members[u].push(j);
            anchors_cell.push(u);
        }
        Ok(CondMeanEstimator {
            kernel,
            partition,
            anchors_x: x,
            anchors_s: s,
            anchors_cell,
            members,
            aggregates: OnceLock::new(),
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn anchors_x(&self) -> &Matrix {
        &self.anchors_x
    }

    pub fn anchors_s(&self) -> &Matrix {
        &self.anchors_s
    }

    pub fn anchors_cell(&self) -> &[usize] {
        &self.anchors_cell
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors_x.rows()
    }

    pub fn cell_count(&self) -> usize {
        self.members.len()
    }

    pub fn cell_members(&self, u: usize) -> &[usize] {
        &self.members[u]
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.anchors_x.cols()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_cell(&self, u: usize) -> Result<()> {
        if u >= self.cell_count() {
            return Err(Error::input(format!(
                "cell index {u} out of range ({} cells)",
                self.cell_count()
            )));
        }
        Ok(())
    }

    /// Kernel sums of `x` against every anchor, in anchor order.
    pub fn profile(&self, x: &[f64]) -> Result<AnchorProfile> {
        self.check_point(x)?;
        Ok(self.profile_unchecked(x))
    }

    pub(crate) fn profile_unchecked(&self, x: &[f64]) -> AnchorProfile {
        let mut cell_sums = vec![0.0; self.cell_count()];
        let mut total = 0.0;
        for (j, xj) in self.anchors_x.row_iter().enumerate() {
            let k = self.kernel.eval_unchecked(x, xj);
            cell_sums[self.anchors_cell[j]] += k;
            total += k;
        }
        AnchorProfile { cell_sums, total }
    }

    /// `⟨φ(x), Ê(φ(X) | S ∈ A_u)⟩`, zero for an empty cell.
    pub fn xi(&self, x: &[f64], u: usize) -> Result<f64> {
        self.check_cell(u)?;
        let p = self.profile(x)?;
        Ok(self.xi_from(&p, u))
    }

    /// `⟨φ(x), Ê(φ(X))⟩`
    pub fn rho(&self, x: &[f64]) -> Result<f64> {
        let p = self.profile(x)?;
        Ok(self.rho_from(&p))
    }

    #[inline]
    pub fn xi_from(&self, p: &AnchorProfile, u: usize) -> f64 {
        let n = self.members[u].len();
        if n == 0 {
            0.0
        } else {
            p.cell_sums[u] / n as f64
        }
    }

    #[inline]
    pub fn rho_from(&self, p: &AnchorProfile) -> f64 {
        p.total / self.anchor_count() as f64
    }

    fn aggregates(&self) -> &CellAggregates {
        self.aggregates.get_or_init(|| {
            let profiles: Vec<AnchorProfile> = (0..self.anchor_count())
                .into_par_iter()
                .map(|j| self.profile_unchecked(self.anchors_x.row(j)))
                .collect();
            let cells = self.cell_count();
            let m = self.anchor_count() as f64;
            let mut o_sum = vec![0.0; cells * cells];
            for (u, idx) in self.members.iter().enumerate() {
                for &j in idx {
                    for v in 0..cells {
                        o_sum[u * cells + v] += profiles[j].cell_sums[v];
                    }
                }
            }
            let mut o = vec![0.0; cells * cells];
            for u in 0..cells {
                let nu = self.members[u].len();
                for v in u..cells {
                    let nv = self.members[v].len();
                    let val = if nu == 0 || nv == 0 {
                        0.0
                    } else {
                        o_sum[u * cells + v] / (nu as f64 * nv as f64)
                    };
                    o[u * cells + v] = val;
                    o[v * cells + u] = val;
                }
            }
            let tau = self
                .members
                .iter()
                .map(|idx| {
                    if idx.is_empty() {
                        0.0
                    } else {
                        let s: f64 = idx.iter().map(|&j| profiles[j].total).sum();
                        s / (m * idx.len() as f64)
                    }
                })
                .collect();
            let big_m = profiles.iter().map(|p| p.total).sum::<f64>() / (m * m);
            CellAggregates { o, tau, big_m }
        })
    }

    /// `⟨Ê(φ|A_u), Ê(φ|A_v)⟩`, zero if either cell is empty.
    pub fn o_cell(&self, u: usize, v: usize) -> Result<f64> {
        self.check_cell(u)?;
        self.check_cell(v)?;
        Ok(self.o_unchecked(u, v))
    }

    #[inline]
    pub(crate) fn o_unchecked(&self, u: usize, v: usize) -> f64 {
        self.aggregates().o[u * self.cell_count() + v]
    }

    /// `⟨Ê(φ|A_u), Ê(φ)⟩`, zero for an empty cell.
    pub fn tau(&self, u: usize) -> Result<f64> {
        self.check_cell(u)?;
        Ok(self.aggregates().tau[u])
    }

    #[inline]
    pub(crate) fn tau_unchecked(&self, u: usize) -> f64 {
        self.aggregates().tau[u]
    }

    /// `‖Ê(φ)‖²`
    pub fn big_m(&self) -> f64 {
        self.aggregates().big_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_two_cells() -> CondMeanEstimator {
        CondMeanEstimator::fit(
            KernelSpec::Linear,
            Partition::categorical(vec![vec![0.0], vec![1.0]]).unwrap(),
            Matrix::column(&[1.0, 3.0]),
            Matrix::column(&[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn counts_for_two_anchors() {
        let est = linear_two_cells();
        assert_eq!(est.cell_counts(), vec![1, 1]);
        assert_eq!(est.anchors_cell(), &[0, 1]);
    }

    #[test]
    fn hand_computed_linear_values() {
        let one_cell = CondMeanEstimator::fit(
            KernelSpec::Linear,
            Partition::categorical(vec![vec![0.0], vec![1.0]]).unwrap(),
            Matrix::column(&[1.0, 3.0]),
            Matrix::column(&[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(one_cell.xi(&[2.0], 1).unwrap(), 4.0);
        assert_eq!(one_cell.xi(&[2.0], 0).unwrap(), 0.0);
        assert_eq!(one_cell.rho(&[2.0]).unwrap(), 4.0);
        assert_eq!(one_cell.tau(0).unwrap(), 0.0);
        assert_eq!(one_cell.o_cell(0, 1).unwrap(), 0.0);

        let est = linear_two_cells();
        assert_eq!(est.o_cell(0, 1).unwrap(), 3.0);
        assert_eq!(est.o_cell(0, 0).unwrap(), 1.0);
        assert_eq!(est.big_m(), 4.0);
        assert_eq!(est.rho(&[2.0]).unwrap(), 4.0);
    }

    #[test]
    fn single_anchor_reduces_to_kernel() {
        let rbf = KernelSpec::rbf(1.0).unwrap();
        let est = CondMeanEstimator::fit(
            rbf,
            Partition::dyadic(vec![0.0], vec![1.0], 2).unwrap(),
            Matrix::from_rows(&[[0.5, -1.0]]).unwrap(),
            Matrix::column(&[0.7]),
        )
        .unwrap();
        let x = [1.0, 0.0];
        let k = rbf.eval(&x, &[0.5, -1.0]).unwrap();
        assert_eq!(est.xi(&x, 1).unwrap(), k);
        assert_eq!(est.rho(&x).unwrap(), k);
        assert_eq!(est.o_cell(1, 1).unwrap(), 1.0);
        assert_eq!(est.tau(1).unwrap(), 1.0);
        assert_eq!(est.big_m(), 1.0);
    }

    #[test]
    fn empty_cell_is_zero_element() {
        let est = CondMeanEstimator::fit(
            KernelSpec::rbf(1.0).unwrap(),
            Partition::dyadic(vec![0.0], vec![1.0], 2).unwrap(),
            Matrix::column(&[0.1, 0.2, 0.3, 0.4]),
            Matrix::column(&[0.1, 0.2, 0.3, 0.4]),
        )
        .unwrap();
        assert_eq!(est.cell_counts(), vec![4, 0]);
        assert_eq!(est.xi(&[0.0], 1).unwrap(), 0.0);
        assert_eq!(est.o_cell(0, 1).unwrap(), 0.0);
        assert_eq!(est.o_cell(1, 1).unwrap(), 0.0);
        assert_eq!(est.tau(1).unwrap(), 0.0);
        // all anchors in one cell: that cell mean is the global mean
        let x = [0.35];
        assert_eq!(est.xi(&x, 0).unwrap(), est.rho(&x).unwrap());
        assert_eq!(est.o_cell(0, 0).unwrap(), est.big_m());
    }

    #[test]
    fn rbf_decays_far_from_anchors() {
        let est = CondMeanEstimator::fit(
            KernelSpec::rbf(1.0).unwrap(),
            Partition::dyadic(vec![0.0], vec![1.0], 1).unwrap(),
            Matrix::column(&[0.0, 0.5]),
            Matrix::column(&[0.1, 0.9]),
        )
        .unwrap();
        assert!(est.rho(&[10.5]).unwrap() < 1e-6);
    }

    #[test]
    fn fit_errors() {
        let p = Partition::dyadic(vec![0.0], vec![1.0], 2).unwrap();
        let k = KernelSpec::Linear;
        assert!(CondMeanEstimator::fit(k, p.clone(), Matrix::zeros(0, 1), Matrix::zeros(0, 1)).is_err());
        assert!(CondMeanEstimator::fit(k, p.clone(), Matrix::column(&[1.0]), Matrix::column(&[0.1, 0.2])).is_err());
        let err = CondMeanEstimator::fit(k, p, Matrix::column(&[1.0]), Matrix::column(&[1.5])).unwrap_err();
        assert!(matches!(err, Error::Assignment { .. }));
    }

    #[test]
    fn bad_cell_index() {
        let est = linear_two_cells();
        assert!(est.xi(&[1.0], 2).is_err());
        assert!(est.tau(5).is_err());
        assert!(est.rho(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn serde_roundtrip_refits() {
        let est = linear_two_cells();
        let json = serde_json::to_string(&est).unwrap();
        let back: CondMeanEstimator = serde_json::from_str(&json).unwrap();
        assert_eq!(back, est);
        assert_eq!(back.anchors_cell(), est.anchors_cell());
    }
}
