use oblivious::models::{dual_objective, fit_ridge, fit_svm, predict_krr, predict_morr, predict_orr};
use oblivious::synthetic::{gen_regression, rng, RegressionVariant};
use oblivious::{gram, self_gram, CondMeanEstimator, DualModel, KernelSpec, Matrix, ObliviousTransformer, Partition};
use proptest::prelude::*;
use rand::Rng;

fn regression_setup(m: usize, gamma: f64, seed: u64) -> ObliviousTransformer {
    let d = gen_regression(m, gamma, RegressionVariant::Exp1, seed).unwrap();
    let part = Partition::dyadic(vec![-5.0], vec![5.0], 8).unwrap();
    ObliviousTransformer::new(CondMeanEstimator::fit(KernelSpec::rbf(1.0).unwrap(), part, d.x, d.s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // cell means are averages: every probe sees a value inside the range of the members
    #[test]
    fn estimator_convexity_and_tower(seed in 0u64..10_000, probe in -6.0f64..6.0) {
        let t = regression_setup(40, 0.3, seed);
        let est = t.estimator();
        let k = est.kernel();
        let p = [probe];
        let m = est.anchor_count() as f64;
        let mut tower = 0.0;
        for u in 0..est.cell_count() {
            let members = est.cell_members(u);
            let xi = est.xi(&p, u).unwrap();
            if members.is_empty() {
                prop_assert_eq!(xi, 0.0);
                continue;
            }
            let vals: Vec<f64> = members.iter().map(|&j| k.eval(&p, est.anchors_x().row(j)).unwrap()).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-15 <= xi && xi <= hi + 1e-15);
            tower += members.len() as f64 / m * xi;
        }
        let rho = est.rho(&p).unwrap();
        prop_assert!((tower - rho).abs() <= 1e-12 * rho.abs().max(1e-300));
    }

    #[test]
    fn cross_products_obey_cauchy_schwarz(seed in 0u64..10_000) {
        let t = regression_setup(60, 0.5, seed);
        let train = gen_regression(15, 0.5, RegressionVariant::Exp1, seed + 1).unwrap();
        let og = t.oblivious_gram(&train.x, &train.s).unwrap();
        let mut r = rng(seed);
        let (x, s) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
        let cross = t.oblivious_cross(&og, &[x], &[s]).unwrap();
        let nn = t.z_norm_sq(&[x], &[s]).unwrap();
        for (i, c) in cross.iter().enumerate() {
            prop_assert!(c.is_finite());
            let bound = (nn * og.matrix().get(i, i)).max(0.0).sqrt();
            prop_assert!(c.abs() <= bound * (1.0 + 1e-9) + 1e-12);
        }
    }
}

#[test]
fn orr_matches_one_dimensional_ridge() {
    // linear kernel: Z is a scalar, so ridge has the closed form w = Σ z·y / (Σ z² + λ)
    let ax = Matrix::column(&[1.0, 3.0, 2.0, -1.0]);
    let as_ = Matrix::column(&[0.0, 1.0, 1.0, 0.0]);
    let part = Partition::categorical(vec![vec![0.0], vec![1.0]]).unwrap();
    let t = ObliviousTransformer::new(CondMeanEstimator::fit(KernelSpec::Linear, part, ax, as_).unwrap());
    let (mean, cell) = (1.25, [0.0, 2.5]);
    let z = |x: f64, s: usize| x - cell[s] + mean;

    let tx = [0.5, 2.0, 4.0, -1.5, 3.0];
    let ts = [0usize, 1, 1, 0, 1];
    let y = [1.0, -2.0, 0.5, 3.0, 1.5];
    let lambda = 0.7;
    let x = Matrix::column(&tx);
    let s = Matrix::column(&ts.map(|v| v as f64));
    let og = t.oblivious_gram(&x, &s).unwrap();
    let model = DualModel::fit_orr(&t, &og, &y, lambda).unwrap();

    let zs: Vec<f64> = tx.iter().zip(&ts).map(|(&x, &s)| z(x, s)).collect();
    let w = zs.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / (zs.iter().map(|a| a * a).sum::<f64>() + lambda);
    for (x, s) in [(1.0, 0usize), (-2.0, 1), (0.0, 0)] {
        let p = predict_orr(&model, &t, &og, &[x], &[s as f64]).unwrap();
        assert!((p - w * z(x, s)).abs() < 1e-10, "{p} vs {}", w * z(x, s));
    }
}

#[test]
fn zero_coefficients_predict_zero() {
    let t = regression_setup(50, 0.2, 3);
    let d = gen_regression(10, 0.2, RegressionVariant::Exp1, 4).unwrap();
    let og = t.oblivious_gram(&d.x, &d.s).unwrap();
    let mut orr = DualModel::fit_orr(&t, &og, d.y.as_ref().unwrap(), 1.0).unwrap();
    orr.alphas.iter_mut().for_each(|a| *a = 0.0);
    assert_eq!(predict_orr(&orr, &t, &og, &[1.0], &[2.0]).unwrap(), 0.0);
    let mut krr = DualModel::fit_krr(KernelSpec::rbf(1.0).unwrap(), &d.x, d.y.as_ref().unwrap(), 1.0).unwrap();
    krr.alphas.iter_mut().for_each(|a| *a = 0.0);
    assert_eq!(predict_morr(&krr, &t, &[1.0], &[2.0]).unwrap(), 0.0);
    assert_eq!(predict_krr(&krr, &[1.0]).unwrap(), 0.0);
}

#[test]
fn predictions_invariant_under_training_permutation() {
    let t = regression_setup(80, 0.4, 8);
    let d = gen_regression(40, 0.4, RegressionVariant::Exp2, 9).unwrap();
    let y = d.y.as_ref().unwrap();
    let perm: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
    let px = d.x.select_rows(&perm);
    let ps = d.s.select_rows(&perm);
    let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();

    let og = t.oblivious_gram(&d.x, &d.s).unwrap();
    let pog = t.oblivious_gram(&px, &ps).unwrap();
    let a = DualModel::fit_orr(&t, &og, y, 0.5).unwrap();
    let b = DualModel::fit_orr(&t, &pog, &py, 0.5).unwrap();
    let c = DualModel::fit_morr(&t, &d.x, y, 0.5).unwrap();
    let e = DualModel::fit_morr(&t, &px, &py, 0.5).unwrap();
    for (x, s) in [(0.3, -1.0), (4.0, 2.0), (-2.5, 4.9)] {
        let (p1, p2) = (a.predictor().unwrap().predict(&[x], &[s]).unwrap(), b.predictor().unwrap().predict(&[x], &[s]).unwrap());
        assert!((p1 - p2).abs() < 1e-10);
        let (p1, p2) = (c.predictor().unwrap().predict(&[x], &[s]).unwrap(), e.predictor().unwrap().predict(&[x], &[s]).unwrap());
        assert!((p1 - p2).abs() < 1e-10);
    }
}

#[test]
fn ridge_gradient_vanishes_on_oblivious_gram() {
    let t = regression_setup(100, 0.6, 12);
    let d = gen_regression(60, 0.6, RegressionVariant::Exp1, 13).unwrap();
    let og = t.oblivious_gram(&d.x, &d.s).unwrap();
    let y = d.y.as_ref().unwrap();
    for lambda in [1.0 / 32.0, 1.0, 32.0] {
        let a = fit_ridge(og.matrix(), y, lambda).unwrap();
        let g = oblivious::models::ridge_objective_gradient(og.matrix(), y, lambda, &a);
        assert!(g.iter().all(|v| v.abs() <= 1e-6), "{lambda}: {:?}", g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
}

fn toy_svm(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&v| if v + r.random_range(-0.8..0.8) > 0.0 { 1.0 } else { -1.0 })
        .collect();
    (self_gram(&KernelSpec::rbf(1.0).unwrap(), &Matrix::column(&x)), y)
}

#[test]
fn svm_dual_feasibility() {
    for seed in 0..5 {
        let (g, y) = toy_svm(40, seed);
        for c in [0.1, 1.0, 10.0] {
            let fit = fit_svm(&g, &y, c, 100).unwrap();
            assert!(fit.converged);
            assert!(fit.alphas.iter().all(|&a| (0.0..=c).contains(&a)));
            let eq: f64 = fit.alphas.iter().zip(&y).map(|(a, l)| a * l).sum();
            assert!(eq.abs() <= 1e-8, "{eq}");
        }
    }
}

#[test]
fn svm_matches_exhaustive_dual_grid() {
    // six points: enumerate α_1..α_5 on an 11-level grid, α_6 fixed by Σ α_i y_i = 0
    let (g, y) = toy_svm(6, 21);
    let c = 1.0;
    let levels = 11usize;
    let mut best = f64::NEG_INFINITY;
    let mut a = [0.0; 6];
    for code in 0..levels.pow(5) {
        let mut rest = code;
        for slot in a.iter_mut().take(5) {
            *slot = (rest % levels) as f64 * c / (levels - 1) as f64;
            rest /= levels;
        }
        let partial: f64 = (0..5).map(|i| a[i] * y[i]).sum();
        a[5] = -partial * y[5];
        if !(0.0..=c).contains(&a[5]) {
            continue;
        }
        best = best.max(dual_objective(&g, &y, &a));
    }
    let fit = fit_svm(&g, &y, c, 100).unwrap();
    let obj = dual_objective(&g, &y, &fit.alphas);
    assert!(obj >= best - 1e-2, "{obj} vs grid {best}");
}

#[test]
fn svm_matches_projected_gradient_on_twenty_points() {
    let (g, y) = toy_svm(20, 5);
    let c = 2.0;
    let n = y.len();
    // projected gradient ascent; projection onto {0 ≤ α ≤ C, yᵀα = 0} by bisection on the shift
    let project = |v: &[f64]| -> Vec<f64> {
        let at = |mu: f64| -> Vec<f64> { v.iter().zip(&y).map(|(a, l)| (a - mu * l).clamp(0.0, c)).collect() };
        let f = |mu: f64| at(mu).iter().zip(&y).map(|(a, l)| a * l).sum::<f64>();
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    };
    let mut a = vec![0.0; n];
    let step = 1.0 / (g.trace() + 1.0);
    for _ in 0..20_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - y[i] * (0..n).map(|j| g.get(i, j) * y[j] * a[j]).sum::<f64>())
            .collect();
        let v: Vec<f64> = a.iter().zip(&grad).map(|(x, d)| x + step * d).collect();
        a = project(&v);
    }
    let oracle = dual_objective(&g, &y, &a);
    let fit = fit_svm(&g, &y, c, 100).unwrap();
    let obj = dual_objective(&g, &y, &fit.alphas);
    assert!(obj >= oracle - 1e-2, "{obj} vs {oracle}");
    assert!(obj <= oracle + 1e-2);
}

#[test]
fn model_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let t = regression_setup(60, 0.5, 30);
    let d = gen_regression(30, 0.5, RegressionVariant::Exp1, 31).unwrap();
    let og = t.oblivious_gram(&d.x, &d.s).unwrap();
    let labels: Vec<f64> = d.y.as_ref().unwrap().iter().map(|&v| if v > 5.0 { 1.0 } else { -1.0 }).collect();
    let models = [
        DualModel::fit_krr(KernelSpec::rbf(1.0).unwrap(), &d.x, d.y.as_ref().unwrap(), 0.25).unwrap(),
        DualModel::fit_orr(&t, &og, d.y.as_ref().unwrap(), 0.25).unwrap(),
        DualModel::fit_morr(&t, &d.x, d.y.as_ref().unwrap(), 0.25).unwrap(),
        DualModel::fit_svm_oblivious(&t, &og, &labels, 1.0, 100).unwrap(),
    ];
    for (i, m) in models.iter().enumerate() {
        let p = dir.path().join(format!("m{i}.json"));
        m.save(&p).unwrap();
        let back = DualModel::load(&p).unwrap();
        assert_eq!(&back, m);
        let test = gen_regression(8, 0.5, RegressionVariant::Exp1, 32).unwrap();
        let a = m.predictor().unwrap().predict_batch(&test.x, Some(&test.s)).unwrap();
        let b = back.predictor().unwrap().predict_batch(&test.x, Some(&test.s)).unwrap();
        assert_eq!(a, b);
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"mode\": \"krr\",\n  oops\n}").unwrap();
    match DualModel::load(&bad) {
        Err(oblivious::Error::Data { line: Some(3), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn plain_cross_gram_matches_kernel() {
    let d = gen_regression(12, 0.5, RegressionVariant::Exp1, 40).unwrap();
    let k = KernelSpec::rbf(1.0).unwrap();
    let g = gram(&k, &d.x, &d.x).unwrap();
    assert_eq!(g, self_gram(&k, &d.x));
}
