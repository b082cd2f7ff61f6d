//! Distance of shifted oblivious features `Z + h*` to the manifold of
//! feature maps `{φ(x) : x ∈ box}`.
//!
//! The projection minimises `f(w) = k(w,w) − 2⟨Z + h*, φ(w)⟩` by a coarse
//! uniform grid followed by golden-section refinement along each coordinate.
//! Everything is deterministic; no randomness is involved.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{self_gram, KernelSpec, Matrix};
use crate::models::fit_ridge;
use crate::oblivious::ObliviousTransformer;

/// An oblivious feature `Z(x, s)`, kept implicit.
#[derive(Debug, Clone)]
pub struct ZRep<'a> {
    t: &'a ObliviousTransformer,
    x: Vec<f64>,
    cell: usize,
}

impl<'a> ZRep<'a> {
    /// Out-of-domain sensitive values are clamped like any new point.
    pub fn new(t: &'a ObliviousTransformer, x: &[f64], s: &[f64]) -> Result<Self> {
        t.check_x(x)?;
        Ok(ZRep {
            t,
            x: x.to_vec(),
            cell: t.cell_of_new(s)?,
        })
    }

    pub fn batch(t: &'a ObliviousTransformer, x: &Matrix, s: &Matrix) -> Result<Vec<Self>> {
        if x.rows() != s.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: s.rows(),
            });
        }
        (0..x.rows()).map(|i| ZRep::new(t, x.row(i), s.row(i))).collect()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn norm_sq(&self) -> f64 {
        self.t.norm_sq_in_cell(&self.x, self.cell)
    }

    /// `⟨Z, φ(w)⟩`
    pub fn eval(&self, w: &[f64]) -> f64 {
        self.t.raw_cross_in_cell(w, &self.x, self.cell)
    }

    /// `⟨Z + h*, φ(w)⟩`, sharing one anchor pass between both terms.
    fn eval_shifted(&self, h: &HStar, w: &[f64]) -> f64 {
        let est = self.t.estimator();
        let k = est.kernel();
        let p = est.profile_unchecked(w);
        let rho = est.rho_from(&p);
        let z = k.eval_unchecked(w, &self.x) - est.xi_from(&p, self.cell) + rho;
        z + match h {
            HStar::Zero => 0.0,
            HStar::GlobalMean => rho,
            HStar::Point(q) => k.eval_unchecked(q, w),
        }
    }

    /// `‖Z + h*‖²`
    fn shifted_norm_sq(&self, h: &HStar) -> f64 {
        let est = self.t.estimator();
        let (cross, hh) = match h {
            HStar::Zero => (0.0, 0.0),
            HStar::GlobalMean => {
                let rho = est.rho_from(&est.profile_unchecked(&self.x));
                (rho - est.tau_unchecked(self.cell) + est.big_m(), est.big_m())
            }
            HStar::Point(q) => (self.eval(q), est.kernel().eval_unchecked(q, q)),
        };
        self.norm_sq() + 2.0 * cross + hh
    }
}

/// Shift applied to `Z` before measuring its distance to the manifold.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum HStar {
    Zero,
    /// The estimated global mean embedding; `Z` itself lives around the origin.
    #[default]
    GlobalMean,
    /// `φ(p)` for a point `p`.
    Point(Vec<f64>),
}

impl HStar {
    /// `‖h*‖`
    pub fn norm(&self, t: &ObliviousTransformer) -> f64 {
        let est = t.estimator();
        match self {
            HStar::Zero => 0.0,
            HStar::GlobalMean => est.big_m().max(0.0).sqrt(),
            HStar::Point(q) => est.kernel().eval_unchecked(q, q).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Grid points per axis.
    pub resolution: usize,
    /// Golden-section steps per coordinate and sweep.
    pub iterations: usize,
    /// Coordinate sweeps after the grid.
    pub sweeps: usize,
    /// Stop refining a coordinate once its bracket is narrower than this.
    pub tolerance: f64,
}

impl OptimizerConfig {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        OptimizerConfig {
            lo,
            hi,
            resolution: 41,
            iterations: 60,
            sweeps: 3,
            tolerance: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::input("optimizer box needs matching non-empty bounds"));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::input(format!(
                "degenerate optimizer box {:?} / {:?}",
                self.lo, self.hi
            )));
        }
        if self.resolution < 2 {
            return Err(Error::input("grid resolution must be at least 2"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::input("optimizer tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w: Vec<f64>,
    pub dist: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Nearest manifold point to `Z + h*` within the configured box.
pub fn project(z: &ZRep, h: &HStar, cfg: &OptimizerConfig) -> Result<Projection> {
    cfg.validate()?;
    let d = cfg.lo.len();
    if z.x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: z.x.len(),
            got: d,
        });
    }
    let k = z.t.estimator().kernel();
    let f = |w: &[f64]| k.eval_unchecked(w, w) - 2.0 * z.eval_shifted(h, w);
    let step: Vec<f64> = (0..d)
        .map(|a| (cfg.hi[a] - cfg.lo[a]) / (cfg.resolution - 1) as f64)
        .collect();
    let node = |a: usize, i: usize| {
        if i + 1 == cfg.resolution {
            cfg.hi[a]
        } else {
            cfg.lo[a] + i as f64 * step[a]
        }
    };

    // coarse grid, mixed-radix order
    let total = cfg
        .resolution
        .checked_pow(d as u32)
        .ok_or_else(|| Error::input("optimizer grid too large"))?;
    let mut w = vec![0.0; d];
    let mut best_w = cfg.lo.clone();
    let mut best = f64::INFINITY;
    for code in 0..total {
        let mut rest = code;
        for a in (0..d).rev() {
            w[a] = node(a, rest % cfg.resolution);
            rest /= cfg.resolution;
        }
        let v = f(&w);
        if v < best {
            best = v;
            best_w.clone_from(&w);
        }
    }

    // golden-section refinement, one coordinate at a time, within ±one grid step
    let mut radius = step.clone();
    for _ in 0..cfg.sweeps {
        for a in 0..d {
            let mut lo = (best_w[a] - radius[a]).max(cfg.lo[a]);
            let mut hi = (best_w[a] + radius[a]).min(cfg.hi[a]);
            let mut probe = best_w.clone();
            let at = |v: f64, probe: &mut Vec<f64>| {
                probe[a] = v;
                f(probe)
            };
            let mut c = hi - INV_PHI * (hi - lo);
            let mut e = lo + INV_PHI * (hi - lo);
            let mut fc = at(c, &mut probe);
            let mut fe = at(e, &mut probe);
            for _ in 0..cfg.iterations {
                if hi - lo < cfg.tolerance {
                    break;
                }
                if fc < fe {
                    hi = e;
                    e = c;
                    fe = fc;
                    c = hi - INV_PHI * (hi - lo);
                    fc = at(c, &mut probe);
                } else {
                    lo = c;
                    c = e;
                    fc = fe;
                    e = lo + INV_PHI * (hi - lo);
                    fe = at(e, &mut probe);
                }
            }
            let (v, fv) = if fc < fe { (c, fc) } else { (e, fe) };
            if fv < best {
                best = fv;
                best_w[a] = v;
            }
            radius[a] = (hi - lo).max(cfg.tolerance);
        }
    }

    let dist = (z.shifted_norm_sq(h) + best).max(0.0).sqrt();
    Ok(Projection { w: best_w, dist })
}

#[derive(Debug, Clone)]
pub struct DistanceReport {
    pub d_n: f64,
    pub projections: Vec<Projection>,
}

/// `d_n = (1/n) Σ dist(Z_i + h*, manifold)`
pub fn empirical_distance(zs: &[ZRep], h: &HStar, cfg: &OptimizerConfig) -> Result<DistanceReport> {
    if zs.is_empty() {
        return Err(Error::input("no features to project"));
    }
    let projections: Vec<Projection> = zs
        .par_iter()
        .map(|z| project(z, h, cfg))
        .collect::<Result<_>>()?;
    let d_n = projections.iter().map(|p| p.dist).sum::<f64>() / zs.len() as f64;
    Ok(DistanceReport { d_n, projections })
}

/// Tail bound `2·exp(−2nε²/(25ρ²))` on `|d_n − E d_n| > ε` for `‖h*‖ ≤ ρ`.
pub fn hoeffding_bound(n: usize, eps: f64, rho: f64) -> f64 {
    (2.0 * (-2.0 * n as f64 * eps * eps / (25.0 * rho * rho)).exp()).min(2.0)
}

/// The `ε` at which the tail bound equals `δ`: `5ρ·√(ln(2/δ)/(2n))`.
pub fn confidence_radius(n: usize, delta: f64, rho: f64) -> f64 {
    5.0 * rho * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiBound {
    pub bound: f64,
    pub lambda: f64,
    pub rms: f64,
    pub norm: f64,
}

/// Upper bound on the indicator trade-off `ψ(A)` restricted to ridge fits:
/// `min_λ 2·RMS(χ_A(w) − f_λ(w)) + ‖f_λ‖·d̂`.
pub fn psi_upper_bound(
    kernel: &KernelSpec,
    w: &Matrix,
    targets: &[f64],
    lambdas: &[f64],
    d_hat: f64,
) -> Result<PsiBound> {
    if lambdas.is_empty() {
        return Err(Error::input("empty regularisation grid"));
    }
    if targets.len() != w.rows() {
        return Err(Error::DimensionMismatch {
            expected: w.rows(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::input("indicator targets must be 0 or 1"));
    }
    let g = self_gram(kernel, w);
    let n = targets.len() as f64;
    let mut best: Option<PsiBound> = None;
    for &lambda in lambdas {
        let alpha = fit_ridge(&g, targets, lambda)?;
        let fitted = g.mat_vec(&alpha);
        let rms = (fitted
            .iter()
            .zip(targets)
            .map(|(f, t)| (t - f).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let norm = alpha
            .iter()
            .zip(&fitted)
            .map(|(a, f)| a * f)
            .sum::<f64>()
            .max(0.0)
            .sqrt();
        let bound = 2.0 * rms + norm * d_hat;
        if best.as_ref().is_none_or(|b| bound < b.bound) {
            best = Some(PsiBound { bound, lambda, rms, norm });
        }
    }
    Ok(best.expect("non-empty grid"))
}
