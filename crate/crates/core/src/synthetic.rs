//! Seeded generators for the synthetic experiments.
//!
//! Every dataset draws from its own ChaCha20 stream seeded with the dataset
//! seed, sample by sample in a fixed order, so regeneration is bit-identical
//! on every platform and thread count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::error::{Error, Result};
use crate::io::{write_table, Table};
use crate::kernel::Matrix;

pub type Rng64 = ChaCha20Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Decision threshold on `X + S` and on `X₀`.
pub const THETA: f64 = 2.0;
/// Success probability of the grade shift `B`.
pub const SHIFT_PROB: f64 = 0.9;
/// Variance of the regression noise.
pub const NOISE_VARIANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub s: Matrix,
    pub y: Option<Vec<f64>>,
    pub y_star: Option<Vec<f64>>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn y(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::input("dataset has no y column"))
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            x: self.x.slice_rows(start, end),
            s: self.s.slice_rows(start, end),
            y: self.y.as_ref().map(|v| v[start..end].to_vec()),
            y_star: self.y_star.as_ref().map(|v| v[start..end].to_vec()),
            seed: self.seed,
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.x.cols()).map(|k| format!("x_{k}")).collect();
        h.extend((0..self.s.cols()).map(|k| format!("s_{k}")));
        if self.y.is_some() {
            h.push("y".into());
        }
        if self.y_star.is_some() {
            h.push("y_star".into());
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.len()).map(|i| {
            let mut r = self.x.row(i).to_vec();
            r.extend_from_slice(self.s.row(i));
            if let Some(y) = &self.y {
                r.push(y[i]);
            }
            if let Some(y) = &self.y_star {
                r.push(y[i]);
            }
            r
        });
        write_table(path, &self.header(), rows)
    }

    /// Reads a dataset CSV; `x_0` is mandatory, sensitive and label columns optional.
    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_table(&Table::read(path)?)
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let xc = t.prefixed("x_");
        if xc.is_empty() {
            t.column_index("x_0")?;
        }
        let sc = t.prefixed("s_");
        let opt = |name: &str| -> Result<Option<Vec<f64>>> {
            if t.has_column(name) {
                t.column(name).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Dataset {
            x: t.matrix(&xc),
            s: t.matrix(&sc),
            y: opt("y")?,
            y_star: opt("y_star")?,
            seed: 0,
        })
    }
}

/// How the noisy decision `Y₀` depends on the grade `X₀ ∈ [1, 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// `Y₀ = χ{U ≥ X₀}`, which is identically zero because `U ≤ 1 ≤ X₀`.
    AsWritten,
    /// `Y₀ = χ{U ≤ (X₀ − 1)/3}`: acceptance probability grows with the grade.
    #[default]
    Rescaled,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(LabelMode::AsWritten),
            "rescaled" => Ok(LabelMode::Rescaled),
            _ => Err(Error::config(format!(
                "unknown label mode `{s}` (expected as_written or rescaled)"
            ))),
        }
    }
}

/// Normal(mean, sd) conditioned on `[lo, hi]`, sampled by inverse CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for TruncNormal {
    fn default() -> Self {
        TruncNormal {
            mean: 2.5,
            sd: 1.0,
            lo: 1.0,
            hi: 4.0,
        }
    }
}

impl TruncNormal {
    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0) || !(self.lo < self.hi) || !self.mean.is_finite() {
            return Err(Error::config(format!("invalid truncated normal {self:?}")));
        }
        Ok(())
    }

    fn sampler(&self) -> Result<TruncSampler> {
        self.validate()?;
        let base = NormalDist::new(self.mean, self.sd).map_err(|e| Error::config(e.to_string()))?;
        Ok(TruncSampler {
            p_lo: base.cdf(self.lo),
            p_hi: base.cdf(self.hi),
            base,
            lo: self.lo,
            hi: self.hi,
        })
    }
}

struct TruncSampler {
    base: NormalDist,
    p_lo: f64,
    p_hi: f64,
    lo: f64,
    hi: f64,
}

impl TruncSampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let p = self.p_lo + u * (self.p_hi - self.p_lo);
        self.base.inverse_cdf(p).clamp(self.lo, self.hi)
    }
}

/// Grades with a group-dependent shift: `X = X₀ ∓ B`, `Y = Y₀·χ{X + S ≥ θ}`,
/// ground truth `Y* = χ{X₀ ≥ θ}`.
pub fn gen_classification(n: usize, seed: u64, mode: LabelMode, grade: TruncNormal) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::input("need at least one sample"));
    }
    let grade = grade.sampler()?;
    let mut rng = rng(seed);
    let (mut x, mut s, mut y, mut y_star) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let si = f64::from(u8::from(rng.random_bool(0.5)));
        let x0 = grade.sample(&mut rng);
        let b = f64::from(u8::from(rng.random_bool(SHIFT_PROB)));
        let u: f64 = rng.random();
        let xi = if si == 0.0 { x0 - b } else { x0 + b };
        let y0 = match mode {
            LabelMode::AsWritten => u >= x0,
            LabelMode::Rescaled => u <= (x0 - 1.0) / 3.0,
        };
        x.push(xi);
        s.push(si);
        y.push(f64::from(u8::from(y0 && xi + si >= THETA)));
        y_star.push(f64::from(u8::from(x0 >= THETA)));
    }
    Ok(Dataset {
        x: Matrix::column(&x),
        s: Matrix::column(&s),
        y: Some(y),
        y_star: Some(y_star),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionVariant {
    /// `Y = X² + ε`
    #[default]
    Exp1,
    /// `Y = X² + S² + ε`
    Exp2,
}

impl std::str::FromStr for RegressionVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(RegressionVariant::Exp1),
            "exp2" => Ok(RegressionVariant::Exp2),
            _ => Err(Error::config(format!("unknown variant `{s}` (expected exp1 or exp2)"))),
        }
    }
}

/// `S, U ~ Uniform[−5, 5]`, `X = γU + (1−γ)S`, noise of variance 0.1.
pub fn gen_regression(n: usize, gamma: f64, variant: RegressionVariant, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::input("need at least one sample"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::input(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let noise = Normal::new(0.0, NOISE_VARIANCE.sqrt()).expect("valid sd");
    let mut rng = rng(seed);
    let (mut x, mut s, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let si = rng.random_range(-5.0..=5.0);
        let ui = rng.random_range(-5.0..=5.0);
        let e = noise.sample(&mut rng);
        let xi = gamma * ui + (1.0 - gamma) * si;
        let yi = match variant {
            RegressionVariant::Exp1 => xi * xi + e,
            RegressionVariant::Exp2 => xi * xi + si * si + e,
        };
        x.push(xi);
        s.push(si);
        y.push(yi);
    }
    Ok(Dataset {
        x: Matrix::column(&x),
        s: Matrix::column(&s),
        y: Some(y),
        y_star: None,
        seed,
    })
}

/// Standard normal pair with covariance `c`: `X = cS + √(1−c²)·N`.
pub fn gen_gaussian_pair(n: usize, c: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::input("need at least one sample"));
    }
    if !(-1.0..=1.0).contains(&c) {
        return Err(Error::input(format!("covariance must lie in [-1, 1], got {c}")));
    }
    let mut rng = rng(seed);
    let rest = (1.0 - c * c).sqrt();
    let (mut x, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let si: f64 = StandardNormal.sample(&mut rng);
        let ni: f64 = StandardNormal.sample(&mut rng);
        x.push(c * si + rest * ni);
        s.push(si);
    }
    Ok(Dataset {
        x: Matrix::column(&x),
        s: Matrix::column(&s),
        y: None,
        y_star: None,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn cov(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn classification_shapes_and_threshold() {
        let d = gen_classification(1000, 3, LabelMode::Rescaled, TruncNormal::default()).unwrap();
        assert_eq!(d.len(), 1000);
        let x = d.x.as_slice();
        let s = d.s.as_slice();
        let y = d.y.as_ref().unwrap();
        for i in 0..1000 {
            assert!(s[i] == 0.0 || s[i] == 1.0);
            assert!((0.0..=5.0).contains(&x[i]));
            if x[i] + s[i] < THETA {
                assert_eq!(y[i], 0.0);
            }
        }
        let pos = mean(y);
        assert!(pos > 0.1 && pos < 0.9, "{pos}");
    }

    #[test]
    fn as_written_labels_vanish() {
        let d = gen_classification(2000, 9, LabelMode::AsWritten, TruncNormal::default()).unwrap();
        assert_eq!(mean(d.y.as_ref().unwrap()), 0.0);
        // Y* still carries the grade threshold
        assert!(mean(d.y_star.as_ref().unwrap()) > 0.5);
    }

    #[test]
    fn y_star_is_grade_threshold() {
        // X₀ is recoverable only through Y*; check the implied share against the truncated law.
        let t = TruncNormal::default();
        let base = NormalDist::new(2.5, 1.0).unwrap();
        let p = (base.cdf(4.0) - base.cdf(2.0)) / (base.cdf(4.0) - base.cdf(1.0));
        let d = gen_classification(20000, 1, LabelMode::Rescaled, t).unwrap();
        let share = mean(d.y_star.as_ref().unwrap());
        assert!((share - p).abs() < 0.02, "{share} vs {p}");
    }

    #[test]
    fn truncated_normal_support() {
        let t = TruncNormal::default().sampler().unwrap();
        let mut r = rng(5);
        let v: Vec<f64> = (0..5000).map(|_| t.sample(&mut r)).collect();
        assert!(v.iter().all(|x| (1.0..=4.0).contains(x)));
        assert!((mean(&v) - 2.5).abs() < 0.05);
        assert!(TruncNormal { sd: 0.0, ..TruncNormal::default() }.validate().is_err());
    }

    #[test]
    fn regression_independence_at_gamma_one() {
        let d = gen_regression(2000, 1.0, RegressionVariant::Exp1, 11).unwrap();
        let x = d.x.as_slice();
        let s = d.s.as_slice();
        let r = cov(x, s) / (cov(x, x) * cov(s, s)).sqrt();
        assert!(r.abs() < 0.05, "{r}");
    }

    #[test]
    fn regression_mean_matches_analytic() {
        // E(X²) = (γ² + (1−γ)²)·25/3, E(S²) = 25/3
        for (variant, gamma) in [(RegressionVariant::Exp1, 0.3), (RegressionVariant::Exp2, 0.6)] {
            let n = 10_000;
            let d = gen_regression(n, gamma, variant, 21).unwrap();
            let y = d.y.as_ref().unwrap();
            let mut expected = (gamma * gamma + (1.0 - gamma) * (1.0 - gamma)) * 25.0 / 3.0;
            if variant == RegressionVariant::Exp2 {
                expected += 25.0 / 3.0;
            }
            let m = mean(y);
            let se = (cov(y, y) / n as f64).sqrt();
            assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected} (se {se})");
        }
    }

    #[test]
    fn regression_gamma_zero_floor() {
        let d = gen_regression(50_000, 0.0, RegressionVariant::Exp1, 2).unwrap();
        let y = d.y.as_ref().unwrap();
        let v = cov(y, y);
        assert!((v - (500.0 / 9.0 + 0.1)).abs() < 1.5, "{v}");
        assert!(gen_regression(10, 1.5, RegressionVariant::Exp1, 0).is_err());
    }

    #[test]
    fn gaussian_pair_covariance() {
        let n = 10_000;
        let d = gen_gaussian_pair(n, 0.8, 4).unwrap();
        let c = cov(d.x.as_slice(), d.s.as_slice());
        assert!((0.75..=0.85).contains(&c), "{c}");
        let d = gen_gaussian_pair(n, 0.0, 4).unwrap();
        assert!(cov(d.x.as_slice(), d.s.as_slice()).abs() < 3.0 / (n as f64).sqrt());
        let d = gen_gaussian_pair(100, 1.0, 4).unwrap();
        assert_eq!(d.x, d.s);
        assert!(d.y.is_none());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = gen_regression(300, 0.4, RegressionVariant::Exp2, 77).unwrap();
        let b = gen_regression(300, 0.4, RegressionVariant::Exp2, 77).unwrap();
        let c = gen_regression(300, 0.4, RegressionVariant::Exp2, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
        let a = gen_classification(300, 5, LabelMode::Rescaled, TruncNormal::default()).unwrap();
        let b = gen_classification(300, 5, LabelMode::Rescaled, TruncNormal::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = gen_classification(50, 8, LabelMode::Rescaled, TruncNormal::default()).unwrap();
        d.write_csv(&p).unwrap();
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("x_0,s_0,y,y_star\n"));
        let back = Dataset::read_csv(&p).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.s, d.s);
        assert_eq!(back.y, d.y);
        assert_eq!(back.y_star, d.y_star);
    }
}
