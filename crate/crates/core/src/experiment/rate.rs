//! Convergence of the plug-in conditional mean embedding for the linear
//! kernel and a standard normal pair with covariance `c`, where the true
//! conditional mean is `E(X | S) = cS`.
//!
//! * finite case: `S = ±1` with equal probability, categorical cells;
//! * continuous case: `S ~ N(0, 1)`, `floor(n^(1/4))` dyadic cells over
//!   `[−b, b]`; anchors are clamped into the box, so the edge cells absorb
//!   the tails.
//!
//! The error `‖Ê(φ(X) | cell(S)) − E(φ(X) | S)‖` in `L²(P_S; ℋ)` is computed
//! exactly against the population law of `S`; only the estimator is random.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{rep_seed, row, ExperimentConfig, Report, ResultRow};
use crate::cond_mean::CondMeanEstimator;
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Matrix};
use crate::partition::Partition;
use crate::synthetic::{gen_gaussian_pair, rng};

const CASES: [&str; 2] = ["finite", "continuous"];

pub fn run_rate_study(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize, usize)> = (0..CASES.len())
        .flat_map(|c| (0..cfg.rate_ns.len()).flat_map(move |i| (0..cfg.repetitions).map(move |r| (c, i, r))))
        .collect();
    let rows: Vec<ResultRow> = tasks
        .par_iter()
        .map(|&(c, i, r)| {
            let n = cfg.rate_ns[i];
            // independent stream per (case, n, repetition)
            let seed = rep_seed(cfg.seed, r) ^ (((c as u64) << 32) | n as u64);
            let e = if c == 0 {
                finite_error(n, cfg.rate_c, seed)?
            } else {
                continuous_error(n, cfg.rate_c, cfg.rate_box, seed)?
            };
            Ok(row(CASES[c], n.to_string(), c * cfg.rate_ns.len() + i, r, seed, "h_error", e))
        })
        .collect::<Result<_>>()?;
    let mut report = Report::from_rows(rows);
    for case in CASES {
        let pts: Vec<(f64, f64)> = cfg
            .rate_ns
            .iter()
            .map(|n| {
                let s = report.summary_for(case, &n.to_string(), "h_error").expect("summarised");
                ((*n as f64).ln(), s.mean.ln())
            })
            .collect();
        report.slopes.push((case.to_string(), slope(&pts)));
    }
    Ok(report)
}

/// Least-squares slope of `y` on `x`.
pub fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn finite_error(n: usize, c: f64, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let rest = (1.0 - c * c).sqrt();
    let (mut x, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let si = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let ni: f64 = StandardNormal.sample(&mut r);
        x.push(c * si + rest * ni);
        s.push(si);
    }
    let part = Partition::categorical(vec![vec![-1.0], vec![1.0]])?;
    let est = CondMeanEstimator::fit(KernelSpec::Linear, part, Matrix::column(&x), Matrix::column(&s))?;
    let mut err2 = 0.0;
    for (u, sv) in [-1.0, 1.0].into_iter().enumerate() {
        // ‖m̂_u − c·s‖² = ⟨m̂_u, m̂_u⟩ − 2⟨φ(c·s), m̂_u⟩ + (c·s)²
        err2 += 0.5 * (est.o_cell(u, u)? - 2.0 * est.xi(&[c * sv], u)? + c * c);
    }
    Ok(err2.max(0.0).sqrt())
}

fn continuous_error(n: usize, c: f64, half_width: f64, seed: u64) -> Result<f64> {
    let cells = ((n as f64).powf(0.25).floor() as usize).max(1);
    let d = gen_gaussian_pair(n, c, seed)?;
    let mut s = d.s.clone();
    for i in 0..n {
        s.set(i, 0, s.get(i, 0).clamp(-half_width, half_width));
    }
    let part = Partition::dyadic(vec![-half_width], vec![half_width], cells)?;
    let est = CondMeanEstimator::fit(KernelSpec::Linear, part.clone(), d.x, s)?;
    let mut err2 = 0.0;
    for u in 0..cells {
        let (lo, hi) = part.cell_bounds(u).ok_or_else(|| Error::input("dyadic cell"))?;
        let a = if u == 0 { f64::NEG_INFINITY } else { lo[0] };
        let b = if u + 1 == cells { f64::INFINITY } else { hi[0] };
        let (p, m1, m2) = gaussian_cell_moments(a, b);
        // ∫_cell (m̂_u − c·s)² dΦ(s), with m̂_u² = o(u,u) and m̂_u = ⟨φ(1), m̂_u⟩
        err2 += est.o_cell(u, u)? * p - 2.0 * c * est.xi(&[1.0], u)? * m1 + c * c * m2;
    }
    Ok(err2.max(0.0).sqrt())
}

/// `(∫ φ, ∫ sφ, ∫ s²φ)` over `[a, b]` for the standard normal density `φ`;
/// infinite endpoints allowed.
pub fn gaussian_cell_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let pdf = |t: f64| if t.is_finite() { z.pdf(t) } else { 0.0 };
    let tpdf = |t: f64| if t.is_finite() { t * z.pdf(t) } else { 0.0 };
    let p = z.cdf(b) - z.cdf(a);
    (p, pdf(a) - pdf(b), p + tpdf(a) - tpdf(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_whole_line() {
        let (p, m1, m2) = gaussian_cell_moments(f64::NEG_INFINITY, f64::INFINITY);
        assert!((p - 1.0).abs() < 1e-15);
        assert_eq!(m1, 0.0);
        assert!((m2 - 1.0).abs() < 1e-15);
        // split at 0: half the mass, E[S; S>0] = φ(0)
        let (p, m1, m2) = gaussian_cell_moments(0.0, f64::INFINITY);
        assert!((p - 0.5).abs() < 1e-15);
        assert!((m1 - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((m2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn moments_match_quadrature() {
        let (a, b) = (-0.7, 1.3);
        let steps = 200_000;
        let h = (b - a) / steps as f64;
        let mut q = [0.0; 3];
        for i in 0..steps {
            let t = a + (i as f64 + 0.5) * h;
            let w = (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * h;
            q[0] += w;
            q[1] += t * w;
            q[2] += t * t * w;
        }
        let (p, m1, m2) = gaussian_cell_moments(a, b);
        assert!((p - q[0]).abs() < 1e-9 && (m1 - q[1]).abs() < 1e-9 && (m2 - q[2]).abs() < 1e-9);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [10.0f64, 20.0, 40.0].iter().map(|n| (n.ln(), (3.0 * n.powf(-0.5)).ln())).collect();
        assert!((slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn errors_shrink_with_n() {
        let small: f64 = (0..20).map(|r| finite_error(100, 0.8, r).unwrap()).sum();
        let large: f64 = (0..20).map(|r| finite_error(10_000, 0.8, r).unwrap()).sum();
        assert!(large < small / 5.0, "{small} {large}");
        // a single cell estimates E X = 0; population error is then c
        let e = continuous_error(3, 0.8, 4.0, 1).unwrap();
        assert!(e > 0.3);
    }
}
