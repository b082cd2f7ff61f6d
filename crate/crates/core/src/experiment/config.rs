//! Flat `key = value` (TOML) experiment configuration.
//!
//! Each experiment has its own set of keys and defaults; a config file only
//! needs to name the experiment and override what differs. Unknown keys and
//! keys belonging to another experiment are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::models::power_of_two_grid;
use crate::partition::Partition;
use crate::synthetic::{LabelMode, RegressionVariant, TruncNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Regression,
    Classification,
    RateStudy,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(ExperimentKind::Regression),
            "classification" => Ok(ExperimentKind::Classification),
            "rate_study" | "rate-study" => Ok(ExperimentKind::RateStudy),
            _ => Err(Error::config(format!("unknown experiment `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub repetitions: usize,
    pub out_dir: String,

    pub variant: RegressionVariant,
    pub gammas: Vec<f64>,
    pub label_mode: LabelMode,
    pub grade_mean: f64,
    pub grade_sd: f64,
    pub grade_lo: f64,
    pub grade_hi: f64,

    pub n_estimator: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,

    pub kernel: String,
    pub sigma: f64,
    pub degree: u32,
    pub offset: f64,
    pub partition: String,
    pub s_lo: f64,
    pub s_hi: f64,
    pub cells: usize,
    pub reg_grid: Vec<f64>,
    pub svm_max_passes: usize,

    pub rate_ns: Vec<usize>,
    pub rate_c: f64,
    pub rate_box: f64,
}

/// `(key, description, experiments it applies to)`
const KEYS: &[(&str, &str, &[ExperimentKind])] = {
    use ExperimentKind::*;
    &[
        ("experiment", "experiment id: regression | classification | rate_study", &[Regression, Classification, RateStudy]),
        ("seed", "base seed; repetition r uses seed + r * 0x9E3779B97F4A7C15 (wrapping)", &[Regression, Classification, RateStudy]),
        ("repetitions", "independent repetitions", &[Regression, Classification, RateStudy]),
        ("out_dir", "output directory for results.csv and summary.csv", &[Regression, Classification, RateStudy]),
        ("variant", "exp1: Y = X^2 + e; exp2: Y = X^2 + S^2 + e", &[Regression]),
        ("gammas", "mixing weights, X = gamma*U + (1-gamma)*S", &[Regression]),
        ("label_mode", "rescaled: Y0 = 1{U <= (X0-1)/3}; as_written: Y0 = 1{U >= X0} (identically 0)", &[Classification]),
        ("grade_mean", "base mean of the truncated-normal grade X0", &[Classification]),
        ("grade_sd", "base sd of the truncated-normal grade X0", &[Classification]),
        ("grade_lo", "lower truncation point of X0", &[Classification]),
        ("grade_hi", "upper truncation point of X0", &[Classification]),
        ("n_estimator", "samples used to estimate the conditional mean embeddings", &[Regression, Classification]),
        ("n_train", "training samples", &[Regression, Classification]),
        ("n_validation", "validation samples for choosing lambda / C", &[Regression, Classification]),
        ("n_test", "test samples", &[Regression, Classification]),
        ("kernel", "linear | polynomial | rbf", &[Regression, Classification]),
        ("sigma", "rbf bandwidth", &[Regression, Classification]),
        ("degree", "polynomial degree", &[Regression, Classification]),
        ("offset", "polynomial offset", &[Regression, Classification]),
        ("partition", "dyadic (cells over [s_lo, s_hi]) | categorical (distinct estimator values)", &[Regression, Classification]),
        ("s_lo", "dyadic domain lower bound", &[Regression, Classification]),
        ("s_hi", "dyadic domain upper bound", &[Regression, Classification]),
        ("cells", "dyadic cells per axis", &[Regression, Classification]),
        ("reg_grid", "lambda (ridge) or C (svm) candidates", &[Regression, Classification]),
        ("svm_max_passes", "SMO iteration budget, in multiples of the training size", &[Classification]),
        ("rate_ns", "sample-size ladder", &[RateStudy]),
        ("rate_c", "covariance between X and S", &[RateStudy]),
        ("rate_box", "continuous case: dyadic domain [-rate_box, rate_box], cells = floor(n^(1/4))", &[RateStudy]),
    ]
};

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            experiment: kind,
            seed: 20_190_601,
            repetitions: 20,
            out_dir: "out".into(),
            variant: RegressionVariant::Exp1,
            gammas: (0..=10).map(|i| f64::from(i) / 10.0).collect(),
            label_mode: LabelMode::Rescaled,
            grade_mean: TruncNormal::default().mean,
            grade_sd: TruncNormal::default().sd,
            grade_lo: TruncNormal::default().lo,
            grade_hi: TruncNormal::default().hi,
            n_estimator: 500,
            n_train: 500,
            n_validation: 100,
            n_test: 100,
            kernel: "rbf".into(),
            sigma: 1.0,
            degree: 2,
            offset: 1.0,
            partition: "dyadic".into(),
            s_lo: -5.0,
            s_hi: 5.0,
            cells: 16,
            reg_grid: power_of_two_grid(-5, 5),
            svm_max_passes: 100,
            rate_ns: vec![250, 500, 1000, 2000, 4000],
            rate_c: 0.8,
            rate_box: 4.0,
        };
        match kind {
            ExperimentKind::Regression => base,
            ExperimentKind::Classification => ExperimentConfig {
                repetitions: 10,
                n_estimator: 1000,
                n_train: 1000,
                n_validation: 200,
                n_test: 1000,
                kernel: "linear".into(),
                partition: "categorical".into(),
                ..base
            },
            ExperimentKind::RateStudy => ExperimentConfig {
                repetitions: 50,
                ..base
            },
        }
    }

    /// Parses a config; `experiment` is required, everything else defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let kind: ExperimentKind = match table.get("experiment") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::config("`experiment` must be a string")),
            None => return Err(Error::config("missing required key `experiment`")),
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind)).map_err(|e| Error::config(e.to_string()))?;
        for (k, v) in table {
            match KEYS.iter().find(|(name, ..)| *name == k) {
                None => return Err(Error::config(format!("unknown key `{k}`"))),
                Some((_, _, kinds)) if !kinds.contains(&kind) => {
                    return Err(Error::config(format!("key `{k}` does not apply to {}", kind_name(kind))))
                }
                Some(_) => {}
            }
            let value = coerce(&merged[&k], v);
            merged.insert(k, value);
        }
        let cfg: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Documented defaults for one experiment, as loadable TOML.
    pub fn defaults_text(kind: ExperimentKind) -> String {
        let table = toml::Table::try_from(Self::defaults(kind)).expect("defaults serialize");
        let mut out = String::new();
        for (key, doc, kinds) in KEYS {
            if !kinds.contains(&kind) {
                continue;
            }
            let mut one = toml::Table::new();
            one.insert((*key).to_string(), table[*key].clone());
            out.push_str(&format!("# {doc}\n{}", toml::to_string(&one).expect("value serializes")));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        match self.experiment {
            ExperimentKind::RateStudy => {
                if self.rate_ns.len() < 2 || self.rate_ns.iter().any(|&n| n < 2) {
                    return bad("rate_ns needs at least two sizes, each >= 2".into());
                }
                if !(-1.0..=1.0).contains(&self.rate_c) {
                    return bad(format!("rate_c must lie in [-1, 1], got {}", self.rate_c));
                }
                if !(self.rate_box > 0.0) || !self.rate_box.is_finite() {
                    return bad("rate_box must be positive".into());
                }
                return Ok(());
            }
            ExperimentKind::Regression => {
                if self.gammas.is_empty() || self.gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
                    return bad(format!("gammas must be non-empty and within [0, 1], got {:?}", self.gammas));
                }
            }
            ExperimentKind::Classification => {
                self.grade().validate()?;
                if self.svm_max_passes == 0 {
                    return bad("svm_max_passes must be at least 1".into());
                }
            }
        }
        for (name, v) in [
            ("n_estimator", self.n_estimator),
            ("n_train", self.n_train),
            ("n_validation", self.n_validation),
            ("n_test", self.n_test),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.reg_grid.is_empty() || self.reg_grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad(format!("reg_grid must be non-empty and positive, got {:?}", self.reg_grid));
        }
        self.kernel_spec()?;
        self.partition_spec(&[])?;
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let spec = match self.kernel.as_str() {
            "linear" => Ok(KernelSpec::Linear),
            "polynomial" => KernelSpec::polynomial(self.degree, self.offset),
            "rbf" => KernelSpec::rbf(self.sigma),
            other => return Err(Error::config(format!("unknown kernel `{other}`"))),
        };
        spec.map_err(|e| Error::config(e.to_string()))
    }

    /// Partition over the sensitive space; categorical cells come from the
    /// sorted distinct values of `estimator_s`.
    pub fn partition_spec(&self, estimator_s: &[f64]) -> Result<Partition> {
        match self.partition.as_str() {
            "dyadic" => Partition::dyadic(vec![self.s_lo], vec![self.s_hi], self.cells)
                .map_err(|e| Error::config(e.to_string())),
            "categorical" => {
                if estimator_s.is_empty() {
                    return Partition::categorical(vec![vec![0.0]]);
                }
                let mut v = estimator_s.to_vec();
                v.sort_by(f64::total_cmp);
                v.dedup();
                Partition::categorical(v.into_iter().map(|x| vec![x]).collect())
            }
            other => Err(Error::config(format!("unknown partition `{other}`"))),
        }
    }

    pub fn grade(&self) -> TruncNormal {
        TruncNormal {
            mean: self.grade_mean,
            sd: self.grade_sd,
            lo: self.grade_lo,
            hi: self.grade_hi,
        }
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        rep_seed(self.seed, rep)
    }
}

pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add((rep as u64).wrapping_mul(SEED_STRIDE))
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Regression => "regression",
        ExperimentKind::Classification => "classification",
        ExperimentKind::RateStudy => "rate_study",
    }
}

/// Lets integers stand in for floats (`sigma = 1`, `gammas = [0, 1]`).
fn coerce(default: &toml::Value, v: toml::Value) -> toml::Value {
    use toml::Value;
    match (default, v) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::Array(d), Value::Array(items)) if d.first().is_some_and(Value::is_float) => Value::Array(
            items
                .into_iter()
                .map(|x| match x {
                    Value::Integer(i) => Value::Float(i as f64),
                    other => other,
                })
                .collect(),
        ),
        (_, v) => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        for kind in [ExperimentKind::Regression, ExperimentKind::Classification, ExperimentKind::RateStudy] {
            let text = ExperimentConfig::defaults_text(kind);
            let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(cfg, ExperimentConfig::defaults(kind));
        }
    }

    #[test]
    fn regression_defaults() {
        let c = ExperimentConfig::defaults(ExperimentKind::Regression);
        assert_eq!((c.n_estimator, c.n_train, c.n_validation, c.n_test), (500, 500, 100, 100));
        assert_eq!(c.gammas.len(), 11);
        assert_eq!(c.gammas[10], 1.0);
        assert_eq!(c.repetitions, 20);
        assert_eq!(c.reg_grid.first(), Some(&(1.0 / 32.0)));
        assert_eq!(c.reg_grid.last(), Some(&32.0));
        assert_eq!(c.partition_spec(&[]).unwrap().cell_count(), 16);
        assert_eq!(c.kernel_spec().unwrap(), KernelSpec::rbf(1.0).unwrap());
    }

    #[test]
    fn overrides_and_rejections() {
        let c = ExperimentConfig::from_toml_str("experiment = \"regression\"\nsigma = 2\ngammas = [0, 0.5]\nvariant = \"exp2\"\n").unwrap();
        assert_eq!(c.sigma, 2.0);
        assert_eq!(c.gammas, vec![0.0, 0.5]);
        assert_eq!(c.variant, RegressionVariant::Exp2);

        for bad in [
            "seed = 1",
            "experiment = \"nope\"",
            "experiment = \"regression\"\nbogus = 1",
            "experiment = \"regression\"\nlabel_mode = \"rescaled\"",
            "experiment = \"regression\"\ngammas = [1.5]",
            "experiment = \"regression\"\nreg_grid = []",
            "experiment = \"regression\"\nn_train = 0",
            "experiment = \"regression\"\nsigma = -1.0",
            "experiment = \"classification\"\nkernel = \"cosine\"",
            "experiment = \"rate_study\"\nrate_ns = [100]",
            "experiment = \"regression\"\nsigma = \"wide\"",
        ] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
    }

    #[test]
    fn rep_seeds_distinct() {
        let c = ExperimentConfig::defaults(ExperimentKind::Regression);
        assert_eq!(c.rep_seed(0), c.seed);
        assert_ne!(c.rep_seed(1), c.rep_seed(2));
        assert_eq!(rep_seed(u64::MAX, 1), SEED_STRIDE.wrapping_sub(1));
    }
}
