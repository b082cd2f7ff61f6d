//! Oblivious features `Z = φ(x) - Ê[φ(X) | S ∈ A(s)] + Ê[φ(X)]`.
//!
//! `Z` is never materialised. For points `(x, s)` and `(x', s')` with cells
//! `a = A(s)` and `b = A(s')` the inner product expands to
//!
//! ```text
//! ⟨Z, Z'⟩ = k(x, x') - ξ(x, b) - ξ(x', a) + o(a, b)
//!         + ρ(x) + ρ(x') + M - τ(a) - τ(b)
//! ```
//!
//! where `ξ(x, u) = ⟨φ(x), Ê(φ|A_u)⟩`, `ρ(x) = ⟨φ(x), Ê(φ)⟩`,
//! `o(u, v) = ⟨Ê(φ|A_u), Ê(φ|A_v)⟩`, `τ(u) = ⟨Ê(φ|A_u), Ê(φ)⟩` and
//! `M = ‖Ê(φ)‖²`. The global-mean shift `+Ê(φ)` is part of every `Z`, which is
//! what makes the `+ρ` terms positive. The linear-kernel tests rebuild `Z`
//! explicitly and check this expansion entry by entry.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::cond_mean::{AnchorProfile, CondMeanEstimator};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::kernel::Matrix;
use crate::partition::ClampTally;

/// Builds oblivious inner products from a fitted conditional mean estimator.
#[derive(Debug, Clone)]
pub struct ObliviousTransformer {
    estimator: Arc<CondMeanEstimator>,
    clamped: Arc<ClampTally>,
}

/// Per-point quantities needed to pair a point with any other oblivious feature.
#[derive(Debug, Clone)]
struct PointTerms {
    cell: usize,
    /// `ξ(x, u)` for every cell `u`.
    xi: Vec<f64>,
    rho: f64,
}

/// Symmetric in its two points by construction, so `⟨Z, Z'⟩` and `⟨Z', Z⟩`
/// agree bit for bit.
#[inline]
#[allow(clippy::too_many_arguments)]
fn combine(k: f64, xi_ab: f64, xi_ba: f64, o: f64, rho_a: f64, rho_b: f64, big_m: f64, tau_a: f64, tau_b: f64) -> f64 {
    k - (xi_ab + xi_ba) + o + (rho_a + rho_b) + big_m - (tau_a + tau_b)
}

impl ObliviousTransformer {
    pub fn new(estimator: CondMeanEstimator) -> Self {
        Self::from_shared(Arc::new(estimator))
    }

    pub fn from_shared(estimator: Arc<CondMeanEstimator>) -> Self {
        ObliviousTransformer {
            estimator,
            clamped: Arc::new(ClampTally::default()),
        }
    }

    pub fn estimator(&self) -> &CondMeanEstimator {
        &self.estimator
    }

    pub fn shared_estimator(&self) -> Arc<CondMeanEstimator> {
        Arc::clone(&self.estimator)
    }

    /// Number of prediction-time sensitive values that were clamped into the
    /// partition domain so far.
    pub fn clamped_count(&self) -> usize {
        self.clamped.count()
    }

    pub(crate) fn check_x(&self, x: &[f64]) -> Result<()> {
        let d = self.estimator.feature_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        Ok(())
    }

    /// Strict cell lookup (training data).
    pub fn cell_of(&self, s: &[f64]) -> Result<usize> {
        self.estimator.partition().assign(s)
    }

    /// Cell lookup for new points: out-of-domain values go to the nearest cell
    /// and are counted.
    pub fn cell_of_new(&self, s: &[f64]) -> Result<usize> {
        let c = self.estimator.partition().assign_clamped(s)?;
        Ok(self.clamped.record(c))
    }

    fn terms(&self, x: &[f64], cell: usize) -> PointTerms {
        let p: AnchorProfile = self.estimator.profile_unchecked(x);
        let est = &*self.estimator;
        PointTerms {
            cell,
            xi: (0..est.cell_count()).map(|u| est.xi_from(&p, u)).collect(),
            rho: est.rho_from(&p),
        }
    }

    #[inline]
    fn pair(&self, x: &[f64], a: &PointTerms, y: &[f64], b: &PointTerms) -> f64 {
        let est = &*self.estimator;
        combine(
            est.kernel().eval_unchecked(x, y),
            a.xi[b.cell],
            b.xi[a.cell],
            est.o_unchecked(a.cell, b.cell),
            a.rho,
            b.rho,
            est.big_m(),
            est.tau_unchecked(a.cell),
            est.tau_unchecked(b.cell),
        )
    }

    /// `⟨Z(x, s), Z(x', s')⟩` with strict cell assignment.
    pub fn z_dot(&self, x: &[f64], s: &[f64], x2: &[f64], s2: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_x(x2)?;
        let a = self.terms(x, self.cell_of(s)?);
        let b = self.terms(x2, self.cell_of(s2)?);
        Ok(self.pair(x, &a, x2, &b))
    }

    /// `‖Z(x, s)‖²`
    pub fn z_norm_sq(&self, x: &[f64], s: &[f64]) -> Result<f64> {
        self.z_dot(x, s, x, s)
    }

    pub(crate) fn norm_sq_in_cell(&self, x: &[f64], cell: usize) -> f64 {
        let t = self.terms(x, cell);
        self.pair(x, &t, x, &t)
    }

    /// `⟨φ(probe), Z(x, s)⟩ = k(probe, x) - ξ(probe, A(s)) + ρ(probe)`.
    ///
    /// This is the raw-feature cross product used by the M-oblivious predictor
    /// and the evaluation `Z(probe)` of the oblivious feature as a function.
    /// The sensitive value goes through the clamping policy for new points.
    pub fn raw_cross(&self, probe: &[f64], x: &[f64], s: &[f64]) -> Result<f64> {
        self.check_x(probe)?;
        self.check_x(x)?;
        let cell = self.cell_of_new(s)?;
        Ok(self.raw_cross_in_cell(probe, x, cell))
    }

    pub(crate) fn raw_cross_in_cell(&self, probe: &[f64], x: &[f64], cell: usize) -> f64 {
        let est = &*self.estimator;
        let p = est.profile_unchecked(probe);
        est.kernel().eval_unchecked(probe, x) - est.xi_from(&p, cell) + est.rho_from(&p)
    }

    /// Cells, `ξ` rows and `ρ` values of training points, without the Gram.
    pub fn training_terms(&self, x: &Matrix, s: &Matrix) -> Result<TrainingTerms> {
        if x.rows() == 0 {
            return Err(Error::input("need at least one training point"));
        }
        if x.rows() != s.rows() {
            return Err(Error::input(format!(
                "features have {} rows but sensitive features have {}",
                x.rows(),
                s.rows()
            )));
        }
        self.check_x(x.row(0))?;
        let cells: Vec<usize> = s.row_iter().map(|r| self.cell_of(r)).collect::<Result<_>>()?;
        let terms: Vec<PointTerms> = (0..x.rows())
            .into_par_iter()
            .map(|i| self.terms(x.row(i), cells[i]))
            .collect();
        Ok(TrainingTerms {
            x: x.clone(),
            s: s.clone(),
            terms,
            cell_count: self.estimator.cell_count(),
            has_cells: true,
        })
    }

    /// `ξ` rows and `ρ` values of raw training points whose sensitive values
    /// are unknown. Enough for [`Self::raw_cross_all`], not for oblivious
    /// cross products.
    pub fn raw_training_terms(&self, x: &Matrix) -> Result<TrainingTerms> {
        if x.rows() == 0 {
            return Err(Error::input("need at least one training point"));
        }
        self.check_x(x.row(0))?;
        let terms: Vec<PointTerms> = (0..x.rows())
            .into_par_iter()
            .map(|i| self.terms(x.row(i), 0))
            .collect();
        Ok(TrainingTerms {
            x: x.clone(),
            s: Matrix::zeros(x.rows(), 0),
            terms,
            cell_count: self.estimator.cell_count(),
            has_cells: false,
        })
    }

    /// Oblivious Gram matrix of the rows of `(x, s)`.
    pub fn oblivious_gram(&self, x: &Matrix, s: &Matrix) -> Result<ObliviousGram> {
        let terms = self.training_terms(x, s)?;
        let n = x.rows();
        // force the cell aggregates before fanning out
        self.estimator.big_m();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (xi, ti) = (terms.x.row(i), &terms.terms[i]);
                (i..n)
                    .map(|j| self.pair(xi, ti, terms.x.row(j), &terms.terms[j]))
                    .collect()
            })
            .collect();
        let mut matrix = Matrix::zeros(n, n);
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                matrix.set(i, i + off, v);
                matrix.set(i + off, i, v);
            }
        }
        Ok(ObliviousGram { matrix, terms })
    }

    fn check_terms(&self, terms: &TrainingTerms) -> Result<()> {
        if terms.cell_count != self.estimator.cell_count() {
            return Err(Error::input("training terms were built with a different partition"));
        }
        Ok(())
    }

    /// `⟨Z_new, Z_i⟩` for every training row `i`.
    pub fn oblivious_cross(&self, train: impl AsRef<TrainingTerms>, x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let train = train.as_ref();
        self.check_x(x)?;
        self.check_terms(train)?;
        if !train.has_cells {
            return Err(Error::input("training terms carry no sensitive cells"));
        }
        let a = self.terms(x, self.cell_of_new(s)?);
        Ok((0..train.n())
            .map(|i| self.pair(x, &a, train.x.row(i), &train.terms[i]))
            .collect())
    }

    /// `⟨φ(x_i), Z_new⟩` for every training row `i`; the M-oblivious cross products.
    pub fn raw_cross_all(&self, train: impl AsRef<TrainingTerms>, x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let train = train.as_ref();
        self.check_x(x)?;
        self.check_terms(train)?;
        let a = self.cell_of_new(s)?;
        let kernel = self.estimator.kernel();
        Ok((0..train.n())
            .map(|i| {
                let t = &train.terms[i];
                kernel.eval_unchecked(train.x.row(i), x) - t.xi[a] + t.rho
            })
            .collect())
    }

    /// Evaluates `⟨φ(probe), Z(x, s)⟩` for a batch of probes.
    pub fn inner_with_probes(&self, x: &[f64], s: &[f64], probes: &Matrix) -> Result<Vec<f64>> {
        self.check_x(x)?;
        if probes.rows() > 0 {
            self.check_x(probes.row(0))?;
        }
        let cell = self.cell_of_new(s)?;
        Ok(probes
            .row_iter()
            .map(|p| self.raw_cross_in_cell(p, x, cell))
            .collect())
    }
}

/// Training points with the per-row terms needed to pair new points against them.
#[derive(Debug, Clone)]
pub struct TrainingTerms {
    x: Matrix,
    s: Matrix,
    terms: Vec<PointTerms>,
    cell_count: usize,
    has_cells: bool,
}

impl TrainingTerms {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn train_x(&self) -> &Matrix {
        &self.x
    }

    pub fn train_s(&self) -> &Matrix {
        &self.s
    }

    pub fn cells(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.cell).collect()
    }
}

impl AsRef<TrainingTerms> for TrainingTerms {
    fn as_ref(&self) -> &TrainingTerms {
        self
    }
}

/// Gram matrix of oblivious training features.
#[derive(Debug, Clone)]
pub struct ObliviousGram {
    matrix: Matrix,
    terms: TrainingTerms,
}

impl AsRef<TrainingTerms> for ObliviousGram {
    fn as_ref(&self) -> &TrainingTerms {
        &self.terms
    }
}

impl ObliviousGram {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn terms(&self) -> &TrainingTerms {
        &self.terms
    }

    pub fn train_x(&self) -> &Matrix {
        &self.terms.x
    }

    pub fn train_s(&self) -> &Matrix {
        &self.terms.s
    }

    pub fn cell_of(&self) -> Vec<usize> {
        self.terms.cells()
    }

    /// Row-major CSV dump, 17 significant digits, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for row in self.matrix.row_iter() {
            let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{self_gram, KernelSpec};
    use crate::partition::Partition;

    fn toy() -> ObliviousTransformer {
        let est = CondMeanEstimator::fit(
            KernelSpec::Linear,
            Partition::categorical(vec![vec![0.0], vec![1.0]]).unwrap(),
            Matrix::column(&[1.0, 3.0]),
            Matrix::column(&[0.0, 1.0]),
        )
        .unwrap();
        ObliviousTransformer::new(est)
    }

    #[test]
    fn linear_toy_hand_values() {
        let t = toy();
        // Z = 2 - 1 + 2 = 3
        assert_eq!(t.z_dot(&[2.0], &[0.0], &[2.0], &[0.0]).unwrap(), 9.0);
        assert_eq!(t.raw_cross(&[1.0], &[2.0], &[0.0]).unwrap(), 3.0);
        let g = t.oblivious_gram(&Matrix::column(&[2.0]), &Matrix::column(&[0.0])).unwrap();
        assert_eq!(t.oblivious_cross(&g, &[2.0], &[0.0]).unwrap(), vec![9.0]);
    }

    #[test]
    fn empty_cell_raw_cross() {
        let est = CondMeanEstimator::fit(
            KernelSpec::Linear,
            Partition::categorical(vec![vec![0.0], vec![1.0]]).unwrap(),
            Matrix::column(&[1.0, 3.0]),
            Matrix::column(&[0.0, 0.0]),
        )
        .unwrap();
        let t = ObliviousTransformer::new(est);
        // cell 1 empty: k(1, 2) + rho(1) = 2 + 2
        assert_eq!(t.raw_cross(&[1.0], &[2.0], &[1.0]).unwrap(), 4.0);
    }

    #[test]
    fn single_cell_collapses_to_kernel() {
        let rbf = KernelSpec::rbf(1.0).unwrap();
        let anchors = Matrix::column(&[-1.0, 0.2, 0.9, 2.5]);
        let est = CondMeanEstimator::fit(
            rbf,
            Partition::single_cell(vec![0.0], vec![1.0]).unwrap(),
            anchors,
            Matrix::column(&[0.1, 0.4, 0.5, 0.9]),
        )
        .unwrap();
        let t = ObliviousTransformer::new(est);
        let x = Matrix::column(&[-0.5, 0.0, 1.3]);
        let s = Matrix::column(&[0.0, 0.5, 1.0]);
        let g = t.oblivious_gram(&x, &s).unwrap();
        let k = self_gram(&rbf, &x);
        for (a, b) in g.matrix().as_slice().iter().zip(k.as_slice()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        let cross = t.oblivious_cross(&g, &[0.0], &[0.5]).unwrap();
        assert!((cross[1] - 1.0).abs() <= 1e-12);
        assert!((t.raw_cross(&[-0.5], &[1.3], &[0.2]).unwrap() - rbf.eval(&[-0.5], &[1.3]).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn gram_matches_z_dot_bitwise() {
        let t = toy();
        let x = Matrix::column(&[0.5, 2.0, -1.0]);
        let s = Matrix::column(&[1.0, 0.0, 1.0]);
        let g = t.oblivious_gram(&x, &s).unwrap();
        assert!(g.matrix().is_symmetric());
        for i in 0..3 {
            for j in 0..3 {
                let v = t.z_dot(x.row(i), s.row(i), x.row(j), s.row(j)).unwrap();
                assert_eq!(g.matrix().get(i, j), v);
            }
        }
    }

    #[test]
    fn training_requires_in_domain_sensitive_values() {
        let est = CondMeanEstimator::fit(
            KernelSpec::Linear,
            Partition::dyadic(vec![0.0], vec![1.0], 2).unwrap(),
            Matrix::column(&[1.0, 3.0]),
            Matrix::column(&[0.2, 0.8]),
        )
        .unwrap();
        let t = ObliviousTransformer::new(est);
        let err = t
            .oblivious_gram(&Matrix::column(&[1.0]), &Matrix::column(&[2.0]))
            .unwrap_err();
        assert!(matches!(err, Error::Assignment { .. }));
        // prediction clamps instead and counts
        let g = t.oblivious_gram(&Matrix::column(&[1.0]), &Matrix::column(&[0.9])).unwrap();
        assert!(t.oblivious_cross(&g, &[1.0], &[2.0]).is_ok());
        assert_eq!(t.clamped_count(), 1);
        assert!(t.oblivious_cross(&g, &[1.0, 2.0], &[0.5]).is_err());
    }

    #[test]
    fn csv_export() {
        let t = toy();
        let g = t.oblivious_gram(&Matrix::column(&[2.0, 1.0]), &Matrix::column(&[0.0, 1.0])).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: f64 = lines[0].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 9.0);
    }
}
