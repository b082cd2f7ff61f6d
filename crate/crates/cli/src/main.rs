use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use oblivious::dependence::{cell_mean_gap, h_independence_probe, ContingencyTable, SensitiveProbe};
use oblivious::experiment::{self, ExperimentConfig, ExperimentKind};
use oblivious::io::{write_table, Table};
use oblivious::manifold::{confidence_radius, empirical_distance, HStar, OptimizerConfig, ZRep};
use oblivious::synthetic::{gen_classification, gen_gaussian_pair, gen_regression, Dataset, LabelMode, RegressionVariant, TruncNormal};
use oblivious::{CondMeanEstimator, DualModel, Error, KernelSpec, Matrix, Mode, ObliviousTransformer, Partition, Result};

#[derive(Parser)]
#[command(name = "oblivious", version, about = "Oblivious kernel features: data, models, diagnostics and experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset as CSV
    Gen(GenArgs),
    /// Fit a model on a dataset CSV and write the model file
    Fit(FitArgs),
    /// Predict with a saved model
    Predict(PredictArgs),
    /// Dependence diagnostics for predictions against sensitive features
    Audit(AuditArgs),
    /// Distances of oblivious features to the feature-map manifold
    Distance(DistanceArgs),
    /// Run one of the synthetic experiments
    Experiment {
        #[command(subcommand)]
        which: ExperimentCmd,
    },
    /// Convergence rate of the conditional mean estimator
    RateStudy(RunArgs),
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Regression(RunArgs),
    Classification(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply to every key it omits
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the documented default config and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Regression,
    Classification,
    Gaussian,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Generator,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// regression: mixing weight γ
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// regression: exp1 | exp2
    #[arg(long, default_value = "exp1")]
    variant: String,
    /// classification: rescaled | as_written
    #[arg(long, default_value = "rescaled")]
    label_mode: String,
    /// gaussian: covariance between X and S
    #[arg(long, default_value_t = 0.8)]
    c: f64,
}

#[derive(Args, Clone)]
struct ModelSpecArgs {
    /// TOML config supplying kernel and partition keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    offset: Option<f64>,
    /// dyadic | categorical
    #[arg(long)]
    partition: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    s_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    s_hi: Option<f64>,
    #[arg(long)]
    cells: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV (`x_*`, `s_*`, `y`)
    #[arg(long)]
    data: PathBuf,
    /// krr | orr | m_orr | svm_plain | svm_oblivious
    #[arg(long, default_value = "krr")]
    mode: String,
    /// λ for ridge modes, C for svm modes
    #[arg(long, default_value_t = 1.0)]
    reg: f64,
    /// CSV of estimator samples; by default the second half of --data
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    max_passes: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spec: ModelSpecArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    /// Prediction CSV
    #[arg(long)]
    pred: PathBuf,
    /// Column of --pred to audit
    #[arg(long, default_value = "prediction")]
    column: String,
    /// CSV holding the sensitive columns `s_*` (and `x_*` for probes)
    #[arg(long)]
    sens: PathBuf,
    /// Model with a conditional mean estimator; enables the covariance probes
    #[arg(long)]
    model: Option<PathBuf>,
    /// Probe points for h = φ(x*), comma separated (1-d features)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    probes: Vec<f64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spec: ModelSpecArgs,
}

#[derive(Args)]
struct DistanceArgs {
    /// Model with a conditional mean estimator
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// zero | mean | comma-separated point
    #[arg(long, default_value = "mean", allow_hyphen_values = true)]
    h_star: String,
    /// Confidence level of the reported radius
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Search box per axis as lo,hi (default: bounding box of anchors and data)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    domain: Vec<f64>,
    #[arg(long, default_value_t = 41)]
    resolution: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Fit(a) => fit(a),
        Cmd::Predict(a) => predict(a),
        Cmd::Audit(a) => audit(a),
        Cmd::Distance(a) => distance(a),
        Cmd::Experiment { which } => match which {
            ExperimentCmd::Regression(a) => run_experiment(ExperimentKind::Regression, a),
            ExperimentCmd::Classification(a) => run_experiment(ExperimentKind::Classification, a),
        },
        Cmd::RateStudy(a) => run_experiment(ExperimentKind::RateStudy, a),
    }
}

fn run_experiment(kind: ExperimentKind, a: RunArgs) -> Result<()> {
    if a.print_config {
        print!("{}", ExperimentConfig::defaults_text(kind));
        return Ok(());
    }
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config describes {:?}, not {kind:?}",
            cfg.experiment
        )));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o.display().to_string();
    }
    let report = experiment::run(&cfg)?;
    report.write(Path::new(&cfg.out_dir))?;
    eprintln!("wrote {} result rows to {}", report.rows.len(), cfg.out_dir);
    for (case, s) in &report.slopes {
        println!("{case} slope {s:.4}");
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let d = match a.kind {
        Generator::Regression => gen_regression(a.n, a.gamma, a.variant.parse::<RegressionVariant>()?, a.seed)?,
        Generator::Classification => {
            gen_classification(a.n, a.seed, a.label_mode.parse::<LabelMode>()?, TruncNormal::default())?
        }
        Generator::Gaussian => gen_gaussian_pair(a.n, a.c, a.seed)?,
    };
    d.write_csv(&a.out)
}

/// Kernel and partition settings: config file first, flags on top.
fn model_spec(a: &ModelSpecArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::defaults(ExperimentKind::Regression),
    };
    if let Some(v) = &a.kernel {
        cfg.kernel = v.clone();
    }
    if let Some(v) = a.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = a.degree {
        cfg.degree = v;
    }
    if let Some(v) = a.offset {
        cfg.offset = v;
    }
    if let Some(v) = &a.partition {
        cfg.partition = v.clone();
    }
    if let Some(v) = a.s_lo {
        cfg.s_lo = v;
    }
    if let Some(v) = a.s_hi {
        cfg.s_hi = v;
    }
    if let Some(v) = a.cells {
        cfg.cells = v;
    }
    cfg.kernel_spec()?;
    Ok(cfg)
}

fn partition_for(cfg: &ExperimentConfig, s: &Matrix) -> Result<Partition> {
    if cfg.partition == "categorical" {
        return Partition::categorical_from_rows(s.row_iter()).and_then(sorted_categorical);
    }
    if s.cols() != 1 {
        let d = s.cols();
        return Partition::dyadic(vec![cfg.s_lo; d], vec![cfg.s_hi; d], cfg.cells);
    }
    cfg.partition_spec(&[])
}

fn sorted_categorical(p: Partition) -> Result<Partition> {
    match p {
        Partition::Categorical { mut values } => {
            values.sort_by(|a, b| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            Partition::categorical(values)
        }
        other => Ok(other),
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let mode: Mode = a.mode.parse()?;
    let cfg = model_spec(&a.spec)?;
    let kernel = cfg.kernel_spec()?;
    let data = Dataset::read_csv(&a.data)?;
    let (train, anchors) = match (&a.anchors, mode.needs_estimator()) {
        (Some(p), true) => (data, Some(Dataset::read_csv(p)?)),
        (None, true) => {
            let half = data.len() / 2;
            if half == 0 {
                return Err(Error::Data {
                    path: a.data.display().to_string(),
                    line: None,
                    msg: "need at least two rows to split off estimator samples".into(),
                });
            }
            (data.slice(0, half), Some(data.slice(half, data.len())))
        }
        (_, false) => (data, None),
    };
    let y = train.y.clone().ok_or_else(|| Error::MissingColumn {
        path: a.data.display().to_string(),
        column: "y".into(),
    })?;
    let transformer = match &anchors {
        Some(an) => {
            if an.s.cols() == 0 {
                return Err(Error::MissingColumn {
                    path: a.anchors.as_ref().unwrap_or(&a.data).display().to_string(),
                    column: "s_0".into(),
                });
            }
            let part = partition_for(&cfg, &an.s)?;
            Some(ObliviousTransformer::new(CondMeanEstimator::fit(kernel, part, an.x.clone(), an.s.clone())?))
        }
        None => None,
    };
    let labels: Vec<f64> = y.iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect();
    let model = match (mode, &transformer) {
        (Mode::Krr, _) => DualModel::fit_krr(kernel, &train.x, &y, a.reg)?,
        (Mode::SvmPlain, _) => DualModel::fit_svm_plain(kernel, &train.x, &labels, a.reg, a.max_passes)?,
        (Mode::MOrr, Some(t)) => DualModel::fit_morr(t, &train.x, &y, a.reg)?,
        (Mode::Orr, Some(t)) => DualModel::fit_orr(t, &t.oblivious_gram(&train.x, &train.s)?, &y, a.reg)?,
        (Mode::SvmOblivious, Some(t)) => {
            DualModel::fit_svm_oblivious(t, &t.oblivious_gram(&train.x, &train.s)?, &labels, a.reg, a.max_passes)?
        }
        _ => unreachable!("estimator built for every oblivious mode"),
    };
    if !model.converged {
        eprintln!("warning: svm did not converge within {} passes", a.max_passes);
    }
    model.save(&a.out)
}

/// Reads a dataset and checks its columns against the model.
fn read_for_model(path: &Path, model: &DualModel) -> Result<Dataset> {
    let t = Table::read(path)?;
    let d = Dataset::from_table(&t)?;
    let p = path.display().to_string();
    if d.x.cols() < model.feature_dim() {
        return Err(Error::MissingColumn {
            path: p,
            column: format!("x_{}", d.x.cols()),
        });
    }
    if d.x.cols() > model.feature_dim() {
        return Err(Error::Data {
            path: p,
            line: None,
            msg: format!(
                "{} feature columns but the model was trained on {}",
                d.x.cols(),
                model.feature_dim()
            ),
        });
    }
    if let Some(ds) = model.sensitive_dim() {
        if d.s.cols() < ds {
            return Err(Error::MissingColumn {
                path: p,
                column: format!("s_{}", d.s.cols()),
            });
        }
    }
    Ok(d)
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = DualModel::load(&a.model)?;
    let d = read_for_model(&a.data, &model)?;
    let predictor = model.predictor()?;
    let s = model.mode.needs_estimator().then_some(&d.s);
    let values = predictor.predict_batch(&d.x, s)?;
    if let Some(t) = predictor.transformer() {
        if t.clamped_count() > 0 {
            eprintln!("note: {} sensitive values clamped into the partition domain", t.clamped_count());
        }
    }
    if model.mode.is_svm() {
        let header = vec!["decision".to_string(), "prediction".to_string()];
        write_table(&a.out, &header, values.iter().map(|&v| vec![v, if v >= 0.0 { 1.0 } else { 0.0 }]))
    } else {
        write_table(&a.out, &["prediction".to_string()], values.iter().map(|&v| vec![v]))
    }
}

fn audit(a: AuditArgs) -> Result<()> {
    let preds = Table::read(&a.pred)?.column(&a.column)?;
    let sens_table = Table::read(&a.sens)?;
    let data = Dataset::from_table(&sens_table).or_else(|_| {
        let sc = sens_table.prefixed("s_");
        Ok::<_, Error>(Dataset {
            x: Matrix::zeros(sens_table.rows.len(), 0),
            s: sens_table.matrix(&sc),
            y: None,
            y_star: None,
            seed: 0,
        })
    })?;
    if data.s.cols() == 0 {
        return Err(Error::MissingColumn {
            path: a.sens.display().to_string(),
            column: "s_0".into(),
        });
    }
    if data.s.rows() != preds.len() {
        return Err(Error::Data {
            path: a.sens.display().to_string(),
            line: None,
            msg: format!("{} rows but {} predictions", data.s.rows(), preds.len()),
        });
    }
    let model = a.model.as_ref().map(|p| DualModel::load(p)).transpose()?;
    let partition = match model.as_ref().and_then(|m| m.estimator.as_ref()) {
        Some(est) => est.partition().clone(),
        None => partition_for(&model_spec(&a.spec)?, &data.s)?,
    };
    let beta = ContingencyTable::new(&preds, data.s.row_iter())?.beta_tilde();
    let cells: Vec<usize> = data
        .s
        .row_iter()
        .map(|s| partition.assign_clamped(s).map(|c| c.cell))
        .collect::<Result<_>>()?;
    let gap = cell_mean_gap(&preds, &cells, partition.cell_count())?;
    let out = &a.out;
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    oblivious::io::write_text(
        &out.join("audit.csv"),
        &format!(
            "metric,value\nbeta_tilde,{}\ncell_mean_gap,{}\nempty_cells,{}\nn,{}\n",
            oblivious::io::fmt_f64(beta),
            oblivious::io::fmt_f64(gap.gap),
            gap.empty_cells,
            preds.len()
        ),
    )?;
    println!("beta_tilde {beta:.6}  cell_mean_gap {:.6}  empty_cells {}", gap.gap, gap.empty_cells);

    if let Some(est) = model.and_then(|m| m.estimator) {
        if data.x.cols() != est.feature_dim() {
            return Err(Error::MissingColumn {
                path: a.sens.display().to_string(),
                column: format!("x_{}", data.x.cols().min(est.feature_dim())),
            });
        }
        let probes = if a.probes.is_empty() {
            default_probes(&data.x)
        } else {
            Matrix::from_row_major(a.probes.len() / est.feature_dim(), est.feature_dim(), a.probes.clone())?
        };
        let t = ObliviousTransformer::new(est);
        let gs = SensitiveProbe::defaults(&partition);
        let r = h_independence_probe(&t, &data.x, &data.s, &probes, &gs)?;
        let mut header = vec!["probe".to_string()];
        header.extend(r.g_labels.iter().cloned());
        let mut text = header.join(",") + "\n";
        for i in 0..probes.rows() {
            let mut line = vec![probes.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")];
            line.extend((0..gs.len()).map(|b| oblivious::io::fmt_f64(r.cov.get(i, b))));
            text.push_str(&line.join(","));
            text.push('\n');
        }
        oblivious::io::write_text(&out.join("probes.csv"), &text)?;
    }
    Ok(())
}

/// Five points spread over the range of the first feature, other features at their means.
fn default_probes(x: &Matrix) -> Matrix {
    let d = x.cols();
    let col = |k: usize| x.row_iter().map(move |r| r[k]);
    let lo = col(0).fold(f64::INFINITY, f64::min);
    let hi = col(0).fold(f64::NEG_INFINITY, f64::max);
    let means: Vec<f64> = (0..d).map(|k| col(k).sum::<f64>() / x.rows() as f64).collect();
    let rows: Vec<Vec<f64>> = (0..5)
        .map(|i| {
            let mut r = means.clone();
            r[0] = lo + (hi - lo) * i as f64 / 4.0;
            r
        })
        .collect();
    Matrix::from_rows(&rows).expect("rectangular")
}

fn distance(a: DistanceArgs) -> Result<()> {
    let model = DualModel::load(&a.model)?;
    let est = model.estimator.clone().ok_or_else(|| {
        Error::Input(format!("model mode {} carries no conditional mean estimator", model.mode.name()))
    })?;
    let d = read_for_model(&a.data, &model)?;
    let dim = est.feature_dim();
    let (lo, hi) = if a.domain.is_empty() {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for r in est.anchors_x().row_iter().chain(d.x.row_iter()) {
            for k in 0..dim {
                lo[k] = lo[k].min(r[k]);
                hi[k] = hi[k].max(r[k]);
            }
        }
        (lo, hi)
    } else if a.domain.len() == 2 * dim {
        (
            a.domain.iter().step_by(2).copied().collect(),
            a.domain.iter().skip(1).step_by(2).copied().collect(),
        )
    } else {
        return Err(Error::Input(format!("--domain needs {} values (lo,hi per axis)", 2 * dim)));
    };
    let h = match a.h_star.as_str() {
        "zero" => HStar::Zero,
        "mean" => HStar::GlobalMean,
        pt => HStar::Point(
            pt.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Input(format!("bad --h-star `{pt}`"))))
                .collect::<Result<_>>()?,
        ),
    };
    let t = ObliviousTransformer::new(est);
    let mut cfg = OptimizerConfig::new(lo.clone(), hi.clone());
    cfg.resolution = a.resolution;
    let zs = ZRep::batch(&t, &d.x, &d.s)?;
    let report = empirical_distance(&zs, &h, &cfg)?;
    let kernel: &KernelSpec = t.estimator().kernel();
    let rho = kernel.feature_norm_bound(&lo, &hi).max(h.norm(&t));
    let radius = confidence_radius(zs.len(), a.delta, rho);

    let mut header: Vec<String> = vec!["index".into()];
    header.extend((0..dim).map(|k| format!("w_{k}")));
    header.push("dist".into());
    let rows = report.projections.iter().enumerate().map(|(i, p)| {
        let mut r = vec![i as f64];
        r.extend(&p.w);
        r.push(p.dist);
        r
    });
    write_table(&a.out.join("distances.csv"), &header, rows)?;
    write_table(
        &a.out.join("distance_summary.csv"),
        &["n", "d_n", "delta", "rho", "radius"].map(String::from),
        [vec![zs.len() as f64, report.d_n, a.delta, rho, radius]],
    )?;
    println!("d_n {:.6}  radius({}) {:.6}", report.d_n, a.delta, radius);
    Ok(())
}
