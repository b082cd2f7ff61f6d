//! Plain vs oblivious SVM on the grade-shift data: observed-label error,
//! error against the fair labels `Y*`, and β̃ dependence on `S`.

use rayon::prelude::*;

use super::{row, ExperimentConfig, Report, ResultRow};
use crate::cond_mean::CondMeanEstimator;
use crate::dependence::beta_tilde;
use crate::error::Result;
use crate::kernel::{gram, self_gram, Matrix};
use crate::models::{fit_svm, select_reg, zero_one, SvmFit};
use crate::oblivious::ObliviousTransformer;
use crate::synthetic::{gen_classification, Dataset};

pub fn run_classification(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let rows: Vec<Vec<ResultRow>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| task(cfg, r))
        .collect::<Result<_>>()?;
    Ok(Report::from_rows(rows.into_iter().flatten().collect()))
}

fn signs(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| if v > 0.5 { 1.0 } else { -1.0 }).collect()
}

fn decisions(fit: &SvmFit, labels: &[f64], cross: &Matrix) -> Vec<f64> {
    cross.row_iter().map(|r| fit.decision(labels, r)).collect()
}

fn task(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<ResultRow>> {
    let seed = cfg.rep_seed(rep);
    let kernel = cfg.kernel_spec()?;
    let (nt, ne, nv, ns) = (cfg.n_train, cfg.n_estimator, cfg.n_validation, cfg.n_test);
    let data = gen_classification(nt + ne + nv + ns, seed, cfg.label_mode, cfg.grade())?;
    let train = data.slice(0, nt);
    let anchors = data.slice(nt, nt + ne);
    let val = data.slice(nt + ne, nt + ne + nv);
    let test = data.slice(nt + ne + nv, nt + ne + nv + ns);
    let labels = signs(train.y()?);
    let val_labels = signs(val.y()?);

    let partition = cfg.partition_spec(anchors.s.as_slice())?;
    let t = ObliviousTransformer::new(CondMeanEstimator::fit(kernel, partition, anchors.x, anchors.s)?);
    let k = self_gram(&kernel, &train.x);
    let og = t.oblivious_gram(&train.x, &train.s)?;

    let ocross = |d: &Dataset| -> Result<Matrix> {
        let mut v = Vec::with_capacity(d.len() * nt);
        for i in 0..d.len() {
            v.extend(t.oblivious_cross(&og, d.x.row(i), d.s.row(i))?);
        }
        Matrix::from_row_major(d.len(), nt, v)
    };
    let methods = [
        ("svm_plain", k, gram(&kernel, &val.x, &train.x)?, gram(&kernel, &test.x, &train.x)?),
        ("svm_oblivious", og.matrix().clone(), ocross(&val)?, ocross(&test)?),
    ];

    let mut rows = Vec::new();
    let group = match cfg.label_mode {
        crate::synthetic::LabelMode::Rescaled => "rescaled",
        crate::synthetic::LabelMode::AsWritten => "as_written",
    }
    .to_string();
    for (name, g, vc, tc) in &methods {
        let mut fits: Vec<(f64, SvmFit)> = Vec::new();
        for &c in &cfg.reg_grid {
            fits.push((c, fit_svm(g, &labels, c, cfg.svm_max_passes)?));
        }
        let fit_for = |c: f64| &fits.iter().find(|f| f.0 == c).expect("grid value").1;
        let sel = select_reg(&cfg.reg_grid, |c| Ok(zero_one(&decisions(fit_for(c), &labels, vc), &val_labels)))?;
        let fit = fit_for(sel.value);
        let pred: Vec<f64> = decisions(fit, &labels, tc)
            .into_iter()
            .map(|d| if d >= 0.0 { 1.0 } else { 0.0 })
            .collect();
        let err = |truth: &[f64]| pred.iter().zip(truth).filter(|(p, t)| p != t).count() as f64 / pred.len() as f64;
        let y_star = test.y_star.as_deref().expect("generator emits y_star");
        for (metric, value) in [
            ("error", err(test.y()?)),
            ("y_star_error", err(y_star)),
            ("beta_tilde", beta_tilde(&pred, test.s.as_slice())?),
            ("c", sel.value),
            ("converged", f64::from(u8::from(fit.converged))),
        ] {
            rows.push(row(name, group.clone(), 0, rep, seed, metric, value));
        }
    }
    Ok(rows)
}
