//! Seeded Monte Carlo experiments with tidy CSV output.
//!
//! Every experiment expands into independent `(group, repetition)` tasks that
//! run in parallel; each task derives all randomness from its own seed, and
//! rows are sorted before writing, so output is byte-identical across runs
//! and thread counts.

mod classification;
pub mod config;
mod rate;
mod regression;

use std::path::Path;

pub use classification::run_classification;
pub use config::{rep_seed, ExperimentConfig, ExperimentKind, SEED_STRIDE};
pub use rate::{gaussian_cell_moments, run_rate_study, slope};
pub use regression::run_regression;

use crate::error::Result;
use crate::io::{fmt_f64, write_text};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    /// γ, label mode or sample size, depending on the experiment.
    pub group: String,
    /// Position of `group` in the configured order; used for sorting only.
    pub group_index: usize,
    pub repetition: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub group: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single repetition.
    pub sd: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    /// Fitted log-log slopes (rate study only).
    pub slopes: Vec<(String, f64)>,
}

impl Report {
    pub(crate) fn from_rows(mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(|a, b| {
            (a.group_index, &a.method, a.repetition, &a.metric).cmp(&(b.group_index, &b.method, b.repetition, &b.metric))
        });
        let summary = summarize(&rows);
        Report {
            rows,
            summary,
            slopes: Vec::new(),
        }
    }

    pub fn summary_for(&self, method: &str, group: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.group == group && s.metric == metric)
    }

    pub fn values(&self, method: &str, group: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.group == group && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("method,group,repetition,seed,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                r.group,
                r.repetition,
                r.seed,
                r.metric,
                fmt_f64(r.value)
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,group,metric,count,mean,sd\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.method,
                s.group,
                s.metric,
                s.count,
                fmt_f64(s.mean),
                fmt_f64(s.sd)
            ));
        }
        out
    }

    pub fn slopes_csv(&self) -> String {
        let mut out = String::from("case,slope\n");
        for (case, s) in &self.slopes {
            out.push_str(&format!("{case},{}\n", fmt_f64(*s)));
        }
        out
    }

    /// Writes `results.csv`, `summary.csv` and, when present, `slopes.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join("results.csv"), &self.results_csv())?;
        write_text(&dir.join("summary.csv"), &self.summary_csv())?;
        if !self.slopes.is_empty() {
            write_text(&dir.join("slopes.csv"), &self.slopes_csv())?;
        }
        Ok(())
    }
}

/// Mean and sample sd per `(method, group, metric)`, in row order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let k = (r.method.as_str(), r.group.as_str(), r.metric.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, group, metric)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.group == group && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let (mean, sd) = mean_sd(&v);
            SummaryRow {
                method: method.into(),
                group: group.into(),
                metric: metric.into(),
                count: v.len(),
                mean,
                sd,
            }
        })
        .collect()
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Runs whichever experiment the config names.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Regression => run_regression(cfg),
        ExperimentKind::Classification => run_classification(cfg),
        ExperimentKind::RateStudy => run_rate_study(cfg),
    }
}

pub(crate) fn row(method: &str, group: String, group_index: usize, repetition: usize, seed: u64, metric: &str, value: f64) -> ResultRow {
    ResultRow {
        method: method.into(),
        group,
        group_index,
        repetition,
        seed,
        metric: metric.into(),
        value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_matches_rows() {
        let rows = vec![
            row("b", "0".into(), 0, 1, 7, "mse", 3.0),
            row("a", "0".into(), 0, 0, 5, "mse", 1.0),
            row("a", "0".into(), 0, 1, 7, "mse", 2.0),
            row("a", "1".into(), 1, 0, 5, "mse", 4.0),
        ];
        let r = Report::from_rows(rows);
        assert_eq!(r.rows[0].method, "a");
        assert_eq!(r.rows[3].group, "1");
        let s = r.summary_for("a", "0", "mse").unwrap();
        assert_eq!((s.count, s.mean), (2, 1.5));
        assert!((s.sd - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.summary_for("b", "0", "mse").unwrap().sd, 0.0);
        assert!(r.results_csv().starts_with("method,group,repetition,seed,metric,value\na,0,0,5,mse,1.0000000000000000e0\n"));
    }
}
