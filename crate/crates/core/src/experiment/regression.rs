//! KRR vs ORR vs M-ORR as the dependence between `X` and `S` varies.

use rayon::prelude::*;

use super::{row, ExperimentConfig, Report, ResultRow};
use crate::cond_mean::CondMeanEstimator;
use crate::error::Result;
use crate::kernel::{gram, self_gram, Matrix};
use crate::models::{fit_ridge, mse, select_reg};
use crate::oblivious::ObliviousTransformer;
use crate::synthetic::gen_regression;

pub fn run_regression(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.gammas.len())
        .flat_map(|g| (0..cfg.repetitions).map(move |r| (g, r)))
        .collect();
    let rows: Vec<Vec<ResultRow>> = tasks
        .par_iter()
        .map(|&(g, r)| task(cfg, g, r))
        .collect::<Result<_>>()?;
    Ok(Report::from_rows(rows.into_iter().flatten().collect()))
}

/// One `(γ, repetition)`: data are drawn from the repetition seed, so every γ
/// shares the same underlying `(S, U, ε)` draws.
fn task(cfg: &ExperimentConfig, gi: usize, rep: usize) -> Result<Vec<ResultRow>> {
    let gamma = cfg.gammas[gi];
    let seed = cfg.rep_seed(rep);
    let kernel = cfg.kernel_spec()?;
    let (nt, ne, nv, ns) = (cfg.n_train, cfg.n_estimator, cfg.n_validation, cfg.n_test);
    let data = gen_regression(nt + ne + nv + ns, gamma, cfg.variant, seed)?;
    let train = data.slice(0, nt);
    let anchors = data.slice(nt, nt + ne);
    let val = data.slice(nt + ne, nt + ne + nv);
    let test = data.slice(nt + ne + nv, nt + ne + nv + ns);
    let y = train.y()?;

    let partition = cfg.partition_spec(anchors.s.as_slice())?;
    let t = ObliviousTransformer::new(CondMeanEstimator::fit(kernel, partition, anchors.x, anchors.s)?);

    let k = self_gram(&kernel, &train.x);
    let og = t.oblivious_gram(&train.x, &train.s)?;
    let raw = t.raw_training_terms(&train.x)?;

    let crosses = |d: &crate::synthetic::Dataset| -> Result<[Matrix; 3]> {
        let plain = gram(&kernel, &d.x, &train.x)?;
        let mut obl = Vec::with_capacity(d.len() * nt);
        let mut mar = Vec::with_capacity(d.len() * nt);
        for i in 0..d.len() {
            obl.extend(t.oblivious_cross(&og, d.x.row(i), d.s.row(i))?);
            mar.extend(t.raw_cross_all(&raw, d.x.row(i), d.s.row(i))?);
        }
        Ok([
            plain,
            Matrix::from_row_major(d.len(), nt, obl)?,
            Matrix::from_row_major(d.len(), nt, mar)?,
        ])
    };
    let vc = crosses(&val)?;
    let tc = crosses(&test)?;

    // coefficients per λ: plain ridge (shared by KRR and M-ORR) and oblivious ridge
    let mut fits: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::with_capacity(cfg.reg_grid.len());
    for &lambda in &cfg.reg_grid {
        fits.push((lambda, fit_ridge(&k, y, lambda)?, fit_ridge(og.matrix(), y, lambda)?));
    }
    let coef = |lambda: f64, method: usize| -> &Vec<f64> {
        let f = fits.iter().find(|f| f.0 == lambda).expect("grid value");
        if method == 1 {
            &f.2
        } else {
            &f.1
        }
    };

    let group = format!("{gamma}");
    let mut rows = Vec::new();
    for (m, name) in ["krr", "orr", "m_orr"].into_iter().enumerate() {
        let sel = select_reg(&cfg.reg_grid, |lambda| Ok(mse(&vc[m].mat_vec(coef(lambda, m)), val.y()?)))?;
        let test_mse = mse(&tc[m].mat_vec(coef(sel.value, m)), test.y()?);
        rows.push(row(name, group.clone(), gi, rep, seed, "test_mse", test_mse));
        rows.push(row(name, group.clone(), gi, rep, seed, "lambda", sel.value));
    }
    Ok(rows)
}
