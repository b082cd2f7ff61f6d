//! Empirical dependence diagnostics between predictions, features and the
//! sensitive attribute.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kernel::Matrix;
use crate::oblivious::ObliviousTransformer;
use crate::partition::Partition;

/// Float key by bit pattern, with `-0.0` folded onto `0.0`.
fn key(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

/// Joint counts of (prediction value, sensitive value).
#[derive(Debug, Clone, Default)]
pub struct ContingencyTable {
    joint: BTreeMap<(u64, Vec<u64>), u64>,
    pred: BTreeMap<u64, u64>,
    sens: BTreeMap<Vec<u64>, u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn new<'a>(preds: &[f64], sens: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let sens: Vec<&[f64]> = sens.into_iter().collect();
        let rows = sens.len();
        if rows != preds.len() || rows == 0 {
            return Err(Error::input(format!(
                "need equal, non-zero lengths (predictions {}, sensitive rows {rows})",
                preds.len()
            )));
        }
        let mut t = ContingencyTable::default();
        for (p, s) in preds.iter().zip(sens) {
            if !p.is_finite() || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::input("dependence inputs must be finite"));
            }
            let sk: Vec<u64> = s.iter().map(|v| key(*v)).collect();
            *t.joint.entry((key(*p), sk.clone())).or_default() += 1;
            *t.pred.entry(key(*p)).or_default() += 1;
            *t.sens.entry(sk).or_default() += 1;
            t.total += 1;
        }
        Ok(t)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, pred: f64, sens: &[f64]) -> u64 {
        let sk: Vec<u64> = sens.iter().map(|v| key(*v)).collect();
        self.joint.get(&(key(pred), sk)).copied().unwrap_or(0)
    }

    /// `½ Σ_{y,s} |P̂(y,s) − P̂(y)P̂(s)|`, summed in exact integer arithmetic.
    pub fn beta_tilde(&self) -> f64 {
        let n = self.total as i128;
        let mut num: i128 = 0;
        for (y, &ny) in &self.pred {
            for (s, &ns) in &self.sens {
                let nys = self.joint.get(&(*y, s.clone())).copied().unwrap_or(0) as i128;
                num += (n * nys - ny as i128 * ns as i128).abs();
            }
        }
        num as f64 / (2.0 * (n * n) as f64)
    }
}

/// β̃ between predictions and a one-dimensional sensitive attribute.
pub fn beta_tilde(preds: &[f64], sens: &[f64]) -> Result<f64> {
    Ok(ContingencyTable::new(preds, sens.chunks(1))?.beta_tilde())
}

/// β̃ against multi-dimensional sensitive rows.
pub fn beta_tilde_rows(preds: &[f64], sens: &Matrix) -> Result<f64> {
    if sens.rows() != preds.len() {
        return Err(Error::DimensionMismatch {
            expected: preds.len(),
            got: sens.rows(),
        });
    }
    Ok(ContingencyTable::new(preds, sens.row_iter())?.beta_tilde())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGap {
    pub gap: f64,
    pub means: Vec<Option<f64>>,
    pub empty_cells: usize,
}

/// Largest difference between per-cell means of `preds`; empty cells are skipped.
pub fn cell_mean_gap(preds: &[f64], cells: &[usize], cell_count: usize) -> Result<CellGap> {
    if preds.len() != cells.len() {
        return Err(Error::DimensionMismatch {
            expected: preds.len(),
            got: cells.len(),
        });
    }
    let mut sum = vec![0.0; cell_count];
    let mut cnt = vec![0usize; cell_count];
    for (&p, &c) in preds.iter().zip(cells) {
        if c >= cell_count {
            return Err(Error::input(format!("cell index {c} out of range ({cell_count} cells)")));
        }
        sum[c] += p;
        cnt[c] += 1;
    }
    let means: Vec<Option<f64>> = sum
        .iter()
        .zip(&cnt)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let present: Vec<f64> = means.iter().flatten().copied().collect();
    let gap = match (
        present.iter().copied().reduce(f64::max),
        present.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) => hi - lo,
        _ => 0.0,
    };
    Ok(CellGap {
        gap,
        empty_cells: cnt.iter().filter(|&&c| c == 0).count(),
        means,
    })
}

/// Test maps `g` over the sensitive space.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitiveProbe {
    Constant(f64),
    /// Indicator of a partition cell.
    Cell { partition: Partition, cell: usize },
    /// `s_axis^power`
    Power { axis: usize, power: i32 },
}

impl SensitiveProbe {
    pub fn eval(&self, s: &[f64]) -> Result<f64> {
        Ok(match self {
            SensitiveProbe::Constant(c) => *c,
            SensitiveProbe::Cell { partition, cell } => {
                f64::from(u8::from(partition.assign_clamped(s)?.cell == *cell))
            }
            SensitiveProbe::Power { axis, power } => {
                let v = s.get(*axis).ok_or(Error::DimensionMismatch {
                    expected: axis + 1,
                    got: s.len(),
                })?;
                v.powi(*power)
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            SensitiveProbe::Constant(c) => format!("const({c})"),
            SensitiveProbe::Cell { cell, .. } => format!("cell_{cell}"),
            SensitiveProbe::Power { axis, power: 1 } => format!("s_{axis}"),
            SensitiveProbe::Power { axis, power } => format!("s_{axis}^{power}"),
        }
    }

    /// Cell indicators plus `s` and `s²` per axis.
    pub fn defaults(partition: &Partition) -> Vec<SensitiveProbe> {
        let mut out: Vec<SensitiveProbe> = (0..partition.cell_count())
            .map(|cell| SensitiveProbe::Cell {
                partition: partition.clone(),
                cell,
            })
            .collect();
        for axis in 0..partition.dim() {
            out.push(SensitiveProbe::Power { axis, power: 1 });
            out.push(SensitiveProbe::Power { axis, power: 2 });
        }
        out
    }
}

/// Anything that can evaluate `⟨φ(x*), Z(x, s)⟩` for a set of probe points.
pub trait FeatureProbe {
    /// Row `i` of the result holds the values of every probe at eval point `i`.
    fn probe_values(&self, x: &Matrix, s: &Matrix, probes: &Matrix) -> Result<Matrix>;
}

impl FeatureProbe for ObliviousTransformer {
    fn probe_values(&self, x: &Matrix, s: &Matrix, probes: &Matrix) -> Result<Matrix> {
        if x.rows() != s.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: s.rows(),
            });
        }
        let est = self.estimator();
        // per-probe ξ table and ρ, computed once
        let mut pt = Vec::with_capacity(probes.rows());
        for p in probes.row_iter() {
            let prof = est.profile(p)?;
            let xi: Vec<f64> = (0..est.cell_count()).map(|u| est.xi_from(&prof, u)).collect();
            pt.push((xi, est.rho_from(&prof)));
        }
        let mut out = Matrix::zeros(x.rows(), probes.rows());
        for i in 0..x.rows() {
            let cell = self.cell_of_new(s.row(i))?;
            for (a, p) in probes.row_iter().enumerate() {
                let v = est.kernel().eval(p, x.row(i))? - pt[a].0[cell] + pt[a].1;
                out.set(i, a, v);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub g_labels: Vec<String>,
    /// Entry `(a, b)`: covariance of probe point `a` with test map `b`.
    pub cov: Matrix,
}

/// Empirical (1/n) covariances between `⟨φ(x*_a), Z_i⟩` and `g_b(S_i)`.
pub fn h_independence_probe(
    features: &impl FeatureProbe,
    x: &Matrix,
    s: &Matrix,
    probes: &Matrix,
    gs: &[SensitiveProbe],
) -> Result<ProbeReport> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::input("empty evaluation set"));
    }
    let h = features.probe_values(x, s, probes)?;
    let mut cov = Matrix::zeros(probes.rows(), gs.len());
    for (b, g) in gs.iter().enumerate() {
        let gv: Vec<f64> = s.row_iter().map(|r| g.eval(r)).collect::<Result<_>>()?;
        if gv.iter().all(|v| v.to_bits() == gv[0].to_bits()) {
            continue; // constant map: covariance is exactly zero
        }
        let gm = gv.iter().sum::<f64>() / n as f64;
        for a in 0..probes.rows() {
            let hm = (0..n).map(|i| h.get(i, a)).sum::<f64>() / n as f64;
            let c = (0..n).map(|i| (h.get(i, a) - hm) * (gv[i] - gm)).sum::<f64>() / n as f64;
            cov.set(a, b, c);
        }
    }
    Ok(ProbeReport {
        g_labels: gs.iter().map(SensitiveProbe::label).collect(),
        cov,
    })
}
