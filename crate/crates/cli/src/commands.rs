use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use zigzag_core::calibration::{calibration_report, DEFAULT_LEVELS};
use zigzag_core::data::surrogate::gen_surrogate;
use zigzag_core::data::{gen_synthetic, load_csv, save_csv, DatasetMetadata};
use zigzag_core::experiment::{reproduce_toy, split_metrics, sweep_chart, ReportTable, TableRow};
use zigzag_core::oracle::{run_oracle_suites, OracleOptions};
use zigzag_core::train::{train, TrainConfig};
use zigzag_core::uncertainty::{sweep, write_reports_csv};
use zigzag_core::{EstimatorConfig, FeedbackRegressor, ModelBundle, TripletDataset};

use crate::config::ExperimentConfig;
use crate::{
    CalibrateArgs, Cli, Command, DataOverrides, EstimatorOverrides, GenDataArgs, OracleArgs, ReportArgs, Status,
    SweepArgs, ToyArgs, TrainArgs, TrainOverrides,
};

/// Standardized distance beyond which grid points count as extrapolation.
const VALID_Z: f64 = 3.0;

pub(crate) fn run(cli: Cli) -> Result<Status> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Sweep(a) => sweep_cmd(cfg, a),
        Command::OracleVerify(a) => oracle_verify(a),
        Command::Calibrate(a) => calibrate(a),
        Command::ReportTable(a) => report_table(cfg, a),
        Command::ReproduceToy(a) => reproduce(cfg, a),
    }
}

impl DataOverrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(n) = self.n {
            cfg.data.n = n;
        }
        if let Some(g) = self.gamma {
            cfg.data.gamma = g;
        }
        cfg.data.couples_mode |= self.couples;
    }
}

impl TrainOverrides {
    fn apply(&self, t: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        if let Some(v) = &self.hidden {
            t.hidden = v.clone();
        }
        if let Some(v) = self.feedback_mode {
            t.feedback_mode = v;
        }
        t.validate()?;
        Ok(())
    }
}

impl EstimatorOverrides {
    fn apply(&self, e: &mut EstimatorConfig) -> Result<()> {
        if let Some(v) = self.samples {
            e.samples = v;
        }
        if let Some(v) = self.form {
            e.form = v;
        }
        if let Some(v) = self.estimator_seed {
            e.seed = v;
        }
        if e.samples == 0 {
            bail!("--samples must be at least 1");
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn save_dataset(ds: &TripletDataset, path: &Path, seed: u64, meta_extra: impl FnOnce(&mut DatasetMetadata)) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_csv(ds, path).with_context(|| format!("writing {}", path.display()))?;
    let mut meta = DatasetMetadata::describe(ds);
    meta.seed = Some(seed);
    meta_extra(&mut meta);
    meta.save(&path.with_extension("json"))?;
    Ok(())
}

fn gen_data(mut cfg: ExperimentConfig, a: GenDataArgs) -> Result<Status> {
    a.data.apply(&mut cfg);
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    if a.surrogate {
        let scfg = zigzag_core::data::surrogate::SurrogateConfig {
            seed,
            ..cfg.surrogate.clone()
        };
        let splits = gen_surrogate(&scfg)?;
        let stem = a.out.with_extension("");
        let name = |suffix: &str| {
            let mut s = stem.clone().into_os_string();
            s.push(format!("_{suffix}.csv"));
            PathBuf::from(s)
        };
        for (ds, path) in [(&splits.train, name("train")), (&splits.test, name("test"))] {
            save_dataset(ds, &path, seed, |_| {})?;
            println!("wrote {} ({} rows)", path.display(), ds.len());
        }
        return Ok(Status::Ok);
    }
    cfg.data.seed = seed;
    let ds = gen_synthetic(&cfg.data)?;
    save_dataset(&ds, &a.out, seed, |m| m.generator = Some(cfg.data.clone()))?;
    println!("wrote {} ({} rows)", a.out.display(), ds.len());
    Ok(Status::Ok)
}

fn train_cmd(mut cfg: ExperimentConfig, a: TrainArgs) -> Result<Status> {
    a.train.apply(&mut cfg.train)?;
    cfg.train.seed = a.seed.unwrap_or(cfg.seeds[0]);
    let ds = load_csv(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    info!("training on {} rows from {}", ds.len(), a.data.display());
    let outcome = train(&ds, &cfg.train)?;
    outcome.bundle(&cfg.train).save(&a.out)?;

    let log_path = a.loss_log.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut w = create(&log_path)?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    print_json(&outcome.metadata(&cfg.train))?;
    Ok(Status::Ok)
}

fn load_model(path: &Path) -> Result<FeedbackRegressor> {
    let bundle = ModelBundle::load(path).with_context(|| format!("loading model {}", path.display()))?;
    Ok(FeedbackRegressor::from_bundle(&bundle)?)
}

fn read_grid_csv(path: &Path, features: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers != features {
        bail!(
            "{}: columns {:?} do not match the model features {:?}",
            path.display(),
            headers,
            features
        );
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            rec?.iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .with_context(|| format!("{}: row {}: bad value '{v}'", path.display(), i + 2))
                })
                .collect()
        })
        .collect()
}

fn sweep_cmd(mut cfg: ExperimentConfig, a: SweepArgs) -> Result<Status> {
    a.estimator.apply(&mut cfg.estimator)?;
    let model = load_model(&a.model)?;
    let grid = match &a.grid_csv {
        Some(path) => read_grid_csv(path, model.feature_names())?,
        None => {
            if model.input_dim() != 1 {
                bail!("the model has {} features; pass the grid with --grid-csv", model.input_dim());
            }
            let spec = zigzag_core::experiment::GridSpec {
                lo: a.lo.unwrap_or(cfg.grid.lo),
                hi: a.hi.unwrap_or(cfg.grid.hi),
                step: a.step.unwrap_or(cfg.grid.step),
            };
            spec.points()?
        }
    };
    if grid.is_empty() {
        bail!("the grid is empty");
    }
    let outside = grid
        .iter()
        .filter(|x| model.scaler().x(x).iter().any(|z| z.abs() > VALID_Z))
        .count();
    if outside > 0 {
        warn!(
            "{outside} of {} grid points lie more than {VALID_Z} training standard deviations from the training inputs; \
             estimates there are extrapolations",
            grid.len()
        );
    }
    let betas = a.beta_levels.unwrap_or_else(|| cfg.beta_levels.clone());
    let result = sweep(&model, &grid, &cfg.estimator, &betas)?;
    let mut w = create(&a.out)?;
    write_reports_csv(model.feature_names(), &result.reports, &mut w)?;
    w.flush()?;
    if model.input_dim() == 1 {
        let svg = a.svg.unwrap_or_else(|| a.out.with_extension("svg"));
        let chart = sweep_chart("Uncertainty sweep", &result.reports, None);
        fs::write(&svg, chart.to_svg()).with_context(|| format!("writing {}", svg.display()))?;
    }
    println!(
        "wrote {} ({} rows, {} clamped, {outside} outside the training range)",
        a.out.display(),
        result.reports.len(),
        result.clamped
    );
    Ok(Status::Ok)
}

fn oracle_verify(a: OracleArgs) -> Result<Status> {
    let opts = OracleOptions {
        seed: a.seed,
        worlds: a.worlds,
        quadrature_worlds: a.quadrature_worlds,
        quadrature_nodes: a.quadrature_nodes,
        perturb: a.perturb.map(|d| (a.perturb_suite.clone(), d)),
    };
    let report = run_oracle_suites(&opts)?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print_json(&report)?;
    for s in report.suites.iter().filter(|s| !s.pass) {
        eprintln!(
            "suite {} failed: max residual {:e} > tolerance {:e}",
            s.suite, s.max_residual, s.tolerance
        );
    }
    Ok(if report.pass { Status::Ok } else { Status::VerificationFailed })
}

fn calibrate(a: CalibrateArgs) -> Result<Status> {
    let model = load_model(&a.model)?;
    let ds = load_csv(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let (mut preds, mut ys) = (Vec::new(), Vec::new());
    for r in ds.rows() {
        let p = model.predict_marginal(&r.x)?;
        preds.push(p);
        ys.push(r.y1);
        if !ds.couples_mode() {
            preds.push(p);
            ys.push(r.y2);
        }
    }
    let levels = a.levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let report = calibration_report(&preds, &ys, &levels, a.weak_bins, a.strong_bins)?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print_json(&report)?;
    if let Some(tol) = a.max_coverage_error {
        if report.max_coverage_error > tol {
            eprintln!("max coverage error {} exceeds {tol}", report.max_coverage_error);
            return Ok(Status::VerificationFailed);
        }
    }
    Ok(Status::Ok)
}

fn report_table(mut cfg: ExperimentConfig, a: ReportArgs) -> Result<Status> {
    a.train.apply(&mut cfg.train)?;
    a.estimator.apply(&mut cfg.estimator)?;
    let seeds = a.seeds.clone().unwrap_or_else(|| cfg.seeds.clone());
    if seeds.is_empty() {
        bail!("--seeds must list at least one seed");
    }
    let csv_splits = match (&a.train_csv, &a.test_csv) {
        (Some(tr), Some(te)) => Some((load_csv(tr)?, load_csv(te)?)),
        (None, None) => None,
        _ => bail!("--train and --test must be given together"),
    };
    if csv_splits.is_none() && !a.surrogate {
        bail!("pass --surrogate or both --train and --test");
    }

    let mut rows = Vec::new();
    if !a.models.is_empty() {
        let Some((train_ds, test_ds)) = &csv_splits else {
            bail!("--model needs --train and --test");
        };
        for (i, path) in a.models.iter().enumerate() {
            let bundle = ModelBundle::load(path).with_context(|| format!("loading model {}", path.display()))?;
            let model = FeedbackRegressor::from_bundle(&bundle)?;
            let seed = bundle.checkpoint.seed.unwrap_or(i as u64);
            rows.push(evaluate(&model, train_ds, test_ds, seed, &cfg.estimator)?);
        }
    } else {
        for &seed in &seeds {
            let (train_ds, test_ds) = match &csv_splits {
                Some((tr, te)) => (tr.clone(), te.clone()),
                None => {
                    let s = gen_surrogate(&zigzag_core::data::surrogate::SurrogateConfig {
                        seed,
                        ..cfg.surrogate.clone()
                    })?;
                    (s.train, s.test)
                }
            };
            info!("seed {seed}: training on {} rows", train_ds.len());
            let tcfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let model = train(&train_ds, &tcfg)?.model;
            rows.push(evaluate(&model, &train_ds, &test_ds, seed, &cfg.estimator)?);
        }
    }
    let table = ReportTable::from_rows(rows)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            table.write_csv(&mut w)?;
            w.flush()?;
        }
        None => table.write_csv(io::stdout().lock())?,
    }
    if let Some(path) = &a.json {
        write_json(path, &table)?;
    }
    eprintln!(
        "R2 train {} | test {}; mean |cov| train {} | test {}; difference {}%",
        table.train_r2, table.test_r2, table.train_abs_cov, table.test_abs_cov, table.difference_pct
    );
    Ok(Status::Ok)
}

fn evaluate(
    model: &FeedbackRegressor,
    train_ds: &TripletDataset,
    test_ds: &TripletDataset,
    seed: u64,
    est: &EstimatorConfig,
) -> Result<TableRow> {
    let est = EstimatorConfig { seed, ..*est };
    let tr = split_metrics(model, train_ds, &est).context("train split")?;
    let te = split_metrics(model, test_ds, &est).context("test split")?;
    Ok(TableRow::new(seed, tr, te))
}

fn reproduce(mut cfg: ExperimentConfig, a: ToyArgs) -> Result<Status> {
    a.train.apply(&mut cfg.train)?;
    a.estimator.apply(&mut cfg.estimator)?;
    if let Some(g) = a.gamma {
        cfg.data.gamma = g;
    }
    if let Some(n) = a.n {
        cfg.data.n = n;
    }
    let toy = cfg.toy(a.seed.unwrap_or(cfg.seeds[0]));
    let out = a
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("toy_output"));
    let summary = reproduce_toy(&toy, &out)?;
    print_json(&summary)?;
    Ok(Status::Ok)
}
