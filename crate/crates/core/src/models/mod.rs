//! Dual-form predictors on plain and oblivious Gram matrices.
//!
//! * `krr`: ridge on `K`, predicts `Σ α_i k(x_i, x)`.
//! * `orr`: ridge on the oblivious Gram, predicts `Σ α_i ⟨Z_i, Z⟩`.
//! * `m_orr`: ridge on `K`, predicts `Σ α_i ⟨φ(x_i), Z⟩`.
//! * `svm_plain` / `svm_oblivious`: soft-margin SVM on `K` or the oblivious Gram.

mod ridge;
mod select;
mod svm;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ridge::{fit_ridge, ridge_objective_gradient};
pub use select::{mse, power_of_two_grid, select_reg, zero_one, Selection};
pub use svm::{dual_objective, fit_svm, SvmFit, SVM_TOLERANCE};

use crate::cond_mean::CondMeanEstimator;
use crate::error::{Error, Result};
use crate::kernel::{gram, self_gram, KernelSpec, Matrix};
use crate::oblivious::{ObliviousGram, ObliviousTransformer, TrainingTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Krr,
    Orr,
    MOrr,
    SvmPlain,
    SvmOblivious,
}

impl Mode {
    pub fn is_svm(self) -> bool {
        matches!(self, Mode::SvmPlain | Mode::SvmOblivious)
    }

    pub fn needs_estimator(self) -> bool {
        matches!(self, Mode::Orr | Mode::MOrr | Mode::SvmOblivious)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Krr => "krr",
            Mode::Orr => "orr",
            Mode::MOrr => "m_orr",
            Mode::SvmPlain => "svm_plain",
            Mode::SvmOblivious => "svm_oblivious",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "krr" => Mode::Krr,
            "orr" => Mode::Orr,
            "m_orr" | "morr" | "m-orr" => Mode::MOrr,
            "svm_plain" | "svm" => Mode::SvmPlain,
            "svm_oblivious" => Mode::SvmOblivious,
            other => return Err(Error::config(format!("unknown model mode `{other}`"))),
        })
    }
}

/// A fitted dual model together with everything needed to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualModel {
    pub mode: Mode,
    pub kernel: KernelSpec,
    /// `λ` for ridge modes, `C` for svm modes.
    pub reg: f64,
    pub alphas: Vec<f64>,
    /// `±1` training labels (svm modes only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default = "yes")]
    pub converged: bool,
    pub train_x: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_s: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<CondMeanEstimator>,
}

fn yes() -> bool {
    true
}

impl DualModel {
    pub fn fit_krr(kernel: KernelSpec, x: &Matrix, y: &[f64], lambda: f64) -> Result<Self> {
        let k = self_gram(&kernel, x);
        let alphas = fit_ridge(&k, y, lambda)?;
        Ok(Self::ridge(Mode::Krr, kernel, lambda, alphas, x.clone(), None, None))
    }

    pub fn fit_orr(transformer: &ObliviousTransformer, gram: &ObliviousGram, y: &[f64], lambda: f64) -> Result<Self> {
        let alphas = fit_ridge(gram.matrix(), y, lambda)?;
        Ok(Self::ridge(
            Mode::Orr,
            *transformer.estimator().kernel(),
            lambda,
            alphas,
            gram.train_x().clone(),
            Some(gram.train_s().clone()),
            Some(transformer.estimator().clone()),
        ))
    }

    /// KRR coefficients paired with the oblivious transform at prediction time.
    pub fn fit_morr(transformer: &ObliviousTransformer, x: &Matrix, y: &[f64], lambda: f64) -> Result<Self> {
        let kernel = *transformer.estimator().kernel();
        let k = self_gram(&kernel, x);
        let alphas = fit_ridge(&k, y, lambda)?;
        Ok(Self::ridge(
            Mode::MOrr,
            kernel,
            lambda,
            alphas,
            x.clone(),
            None,
            Some(transformer.estimator().clone()),
        ))
    }

    pub fn fit_svm_plain(kernel: KernelSpec, x: &Matrix, labels: &[f64], c: f64, max_passes: usize) -> Result<Self> {
        let k = self_gram(&kernel, x);
        let fit = fit_svm(&k, labels, c, max_passes)?;
        Ok(Self::svm(Mode::SvmPlain, kernel, c, fit, labels, x.clone(), None, None))
    }

    pub fn fit_svm_oblivious(
        transformer: &ObliviousTransformer,
        gram: &ObliviousGram,
        labels: &[f64],
        c: f64,
        max_passes: usize,
    ) -> Result<Self> {
        let fit = fit_svm(gram.matrix(), labels, c, max_passes)?;
        Ok(Self::svm(
            Mode::SvmOblivious,
            *transformer.estimator().kernel(),
            c,
            fit,
            labels,
            gram.train_x().clone(),
            Some(gram.train_s().clone()),
            Some(transformer.estimator().clone()),
        ))
    }

    fn ridge(
        mode: Mode,
        kernel: KernelSpec,
        reg: f64,
        alphas: Vec<f64>,
        train_x: Matrix,
        train_s: Option<Matrix>,
        estimator: Option<CondMeanEstimator>,
    ) -> Self {
        DualModel {
            mode,
            kernel,
            reg,
            alphas,
            labels: None,
            intercept: 0.0,
            converged: true,
            train_x,
            train_s,
            estimator,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn svm(
        mode: Mode,
        kernel: KernelSpec,
        reg: f64,
        fit: SvmFit,
        labels: &[f64],
        train_x: Matrix,
        train_s: Option<Matrix>,
        estimator: Option<CondMeanEstimator>,
    ) -> Self {
        DualModel {
            mode,
            kernel,
            reg,
            alphas: fit.alphas,
            labels: Some(labels.to_vec()),
            intercept: fit.intercept,
            converged: fit.converged,
            train_x,
            train_s,
            estimator,
        }
    }

    /// Checks the structural invariants of a (possibly deserialised) model.
    pub fn validate(&self) -> Result<()> {
        let n = self.train_x.rows();
        if self.alphas.len() != n {
            return Err(Error::input(format!(
                "model has {} coefficients for {n} training rows",
                self.alphas.len()
            )));
        }
        if self.alphas.iter().any(|a| !a.is_finite()) || !self.intercept.is_finite() {
            return Err(Error::Numerical("model coefficients are not finite".into()));
        }
        if self.mode.needs_estimator() && self.estimator.is_none() {
            return Err(Error::input(format!("{} model lacks its estimator", self.mode.name())));
        }
        if matches!(self.mode, Mode::Orr | Mode::SvmOblivious) && self.train_s.is_none() {
            return Err(Error::input(format!(
                "{} model lacks training sensitive features",
                self.mode.name()
            )));
        }
        if self.mode.is_svm() {
            let labels = self
                .labels
                .as_ref()
                .ok_or_else(|| Error::input("svm model lacks labels"))?;
            if labels.len() != n {
                return Err(Error::input("svm labels do not match training size"));
            }
            if self.alphas.iter().any(|&a| a < 0.0 || a > self.reg) {
                return Err(Error::input("svm dual variables outside [0, C]"));
            }
        }
        self.kernel.validate()
    }

    pub fn feature_dim(&self) -> usize {
        self.train_x.cols()
    }

    pub fn sensitive_dim(&self) -> Option<usize> {
        self.estimator.as_ref().map(|e| e.partition().dim())
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        self.validate()?;
        let transformer = self.estimator.clone().map(ObliviousTransformer::new);
        let terms = match (self.mode, &transformer) {
            (Mode::Orr | Mode::SvmOblivious, Some(t)) => {
                Some(t.training_terms(&self.train_x, self.train_s.as_ref().expect("validated"))?)
            }
            (Mode::MOrr, Some(t)) => Some(t.raw_training_terms(&self.train_x)?),
            _ => None,
        };
        Ok(Predictor {
            model: self,
            transformer,
            terms,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::input(format!("cannot serialise model: {e}")))?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let model: DualModel = serde_json::from_str(&text).map_err(|e| Error::Data {
            path: path.display().to_string(),
            line: Some(e.line() as u64),
            msg: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }
}

/// Model plus cached per-training-row terms; cheap to query repeatedly.
#[derive(Debug)]
pub struct Predictor<'a> {
    model: &'a DualModel,
    transformer: Option<ObliviousTransformer>,
    terms: Option<TrainingTerms>,
}

impl Predictor<'_> {
    pub fn transformer(&self) -> Option<&ObliviousTransformer> {
        self.transformer.as_ref()
    }

    /// Cross products of `(x, s)` with every training row, in the geometry of
    /// the model's mode. `s` is ignored by the plain modes.
    pub fn cross_row(&self, x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let m = self.model;
        if x.len() != m.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: m.feature_dim(),
                got: x.len(),
            });
        }
        match m.mode {
            Mode::Krr | Mode::SvmPlain => Ok(m.train_x.row_iter().map(|xi| m.kernel.eval_unchecked(xi, x)).collect()),
            Mode::Orr | Mode::SvmOblivious => {
                let t = self.transformer.as_ref().expect("validated");
                t.oblivious_cross(self.terms.as_ref().expect("built"), x, s)
            }
            Mode::MOrr => {
                let t = self.transformer.as_ref().expect("validated");
                t.raw_cross_all(self.terms.as_ref().expect("built"), x, s)
            }
        }
    }

    /// Ridge prediction, or the svm decision value.
    pub fn predict(&self, x: &[f64], s: &[f64]) -> Result<f64> {
        let row = self.cross_row(x, s)?;
        Ok(self.value_from_row(&row))
    }

    pub fn value_from_row(&self, row: &[f64]) -> f64 {
        let m = self.model;
        match &m.labels {
            Some(labels) if m.mode.is_svm() => m
                .alphas
                .iter()
                .zip(labels)
                .zip(row)
                .map(|((a, y), g)| a * y * g)
                .sum::<f64>()
                + m.intercept,
            _ => m.alphas.iter().zip(row).map(|(a, g)| a * g).sum(),
        }
    }

    pub fn predict_batch(&self, x: &Matrix, s: Option<&Matrix>) -> Result<Vec<f64>> {
        if let Some(s) = s {
            if s.rows() != x.rows() {
                return Err(Error::input("feature and sensitive row counts differ"));
            }
        } else if self.model.mode.needs_estimator() {
            return Err(Error::input(format!(
                "{} predictions need sensitive features",
                self.model.mode.name()
            )));
        }
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict(x.row(i), s.map(|s| s.row(i)).unwrap_or(&[])))
            .collect()
    }
}

/// Plain kernel ridge prediction `Σ α_i k(x_i, x)`.
pub fn predict_krr(model: &DualModel, x: &[f64]) -> Result<f64> {
    let row = gram(&model.kernel, &model.train_x, &Matrix::from_rows(&[x])?)?;
    Ok(model.alphas.iter().zip(row.as_slice()).map(|(a, k)| a * k).sum())
}

/// `Σ α_i ⟨Z_i, Z⟩` for an oblivious ridge model.
pub fn predict_orr(model: &DualModel, transformer: &ObliviousTransformer, gram: &ObliviousGram, x: &[f64], s: &[f64]) -> Result<f64> {
    let row = transformer.oblivious_cross(gram, x, s)?;
    Ok(model.alphas.iter().zip(&row).map(|(a, g)| a * g).sum())
}

/// `Σ α_i ⟨φ(x_i), Z⟩` with `α` from plain KRR.
pub fn predict_morr(krr: &DualModel, transformer: &ObliviousTransformer, x: &[f64], s: &[f64]) -> Result<f64> {
    krr.train_x
        .row_iter()
        .zip(&krr.alphas)
        .map(|(xi, a)| Ok(a * transformer.raw_cross(xi, x, s)?))
        .sum()
}
