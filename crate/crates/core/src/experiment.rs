//! End-to-end experiments: the 1-D toy reproduction and train/test tables.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use crate::data::{gen_synthetic, save_csv, toy_mean, toy_std, DatasetMetadata, SyntheticConfig, TripletDataset};
use crate::error::{input, Result};
use crate::feedback::FeedbackRegressor;
use crate::nn::TrainingMetadata;
use crate::plot::{Band, LineChart, Series};
use crate::train::{train, TrainConfig};
use crate::uncertainty::{linear_grid, sweep, write_reports_csv, EstimatorConfig, UncertaintyReport};

/// Grid specification `lo..=hi` in steps of `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: -9.0,
            hi: 9.0,
            step: 0.05,
        }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        Ok(linear_grid(self.lo, self.hi, self.step)?
            .into_iter()
            .map(|x| vec![x])
            .collect())
    }
}

/// Settings of the toy reproduction; `seed` drives data, training and estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub n: usize,
    pub gamma: f64,
    pub train: TrainConfig,
    pub samples: usize,
    pub form: crate::uncertainty::EstimatorForm,
    pub grid: GridSpec,
    pub beta_levels: Vec<f64>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let est = EstimatorConfig::default();
        Self {
            seed: 0,
            n: 1000,
            gamma: 1.5,
            train: TrainConfig::default(),
            samples: est.samples,
            form: est.form,
            grid: GridSpec::default(),
            beta_levels: vec![0.1, 0.25, 0.5],
        }
    }
}

impl ToyConfig {
    fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            samples: self.samples,
            form: self.form,
            seed: self.seed,
        }
    }

    fn data(&self, couples_mode: bool) -> SyntheticConfig {
        SyntheticConfig {
            n: self.n,
            gamma: self.gamma,
            seed: self.seed,
            couples_mode,
            ..SyntheticConfig::default()
        }
    }
}

/// Summary statistics of one toy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyMetrics {
    /// Mean `|cov|` over `|x| <= 4`.
    pub in_range_abs_cov: f64,
    /// Mean `|cov|` over `7 <= |x| <= 9`.
    pub out_range_abs_cov: f64,
    /// Mean aleatoric estimate over `|x| <= 4`.
    pub in_range_aleatoric: f64,
    /// Pearson correlation of `cov` with the true noise variance over `|x| <= 4`.
    pub cov_noise_correlation: f64,
    /// RMSE of the predicted mean against `x sin x` over `|x| <= 4`.
    pub in_range_rmse: f64,
    pub clamped: usize,
}

const EDGE_TOL: f64 = 1e-9;

fn in_range(x: f64) -> bool {
    x.abs() <= 4.0 + EDGE_TOL
}

fn out_range(x: f64) -> bool {
    x.abs() >= 7.0 - EDGE_TOL && x.abs() <= 9.0 + EDGE_TOL
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    a.iter().covariance(b.iter()) / (a.iter().std_dev() * b.iter().std_dev())
}

pub fn toy_metrics(reports: &[UncertaintyReport], gamma: f64) -> ToyMetrics {
    let inside: Vec<&UncertaintyReport> = reports.iter().filter(|r| in_range(r.x[0])).collect();
    let outside = reports.iter().filter(|r| out_range(r.x[0]));
    let cov: Vec<f64> = inside.iter().map(|r| r.epistemic).collect();
    let noise: Vec<f64> = inside.iter().map(|r| toy_std(r.x[0], gamma).powi(2)).collect();
    ToyMetrics {
        in_range_abs_cov: inside.iter().map(|r| r.abs_epistemic).mean(),
        out_range_abs_cov: outside.map(|r| r.abs_epistemic).mean(),
        in_range_aleatoric: inside.iter().map(|r| r.aleatoric).mean(),
        cov_noise_correlation: pearson(&cov, &noise),
        in_range_rmse: inside.iter().map(|r| (r.mean - toy_mean(r.x[0])).powi(2)).mean().sqrt(),
        clamped: reports.iter().filter(|r| r.clamped).count(),
    }
}

/// One trained toy model with its sweep.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub data: TripletDataset,
    pub model: FeedbackRegressor,
    pub epoch_losses: Vec<f64>,
    pub training: TrainingMetadata,
    pub reports: Vec<UncertaintyReport>,
    pub metrics: ToyMetrics,
}

/// Generates toy data, trains, and sweeps the grid.
pub fn toy_run(cfg: &ToyConfig, couples_mode: bool) -> Result<ToyRun> {
    let data = gen_synthetic(&cfg.data(couples_mode))?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let outcome = train(&data, &train_cfg)?;
    let sw = sweep(&outcome.model, &cfg.grid.points()?, &cfg.estimator(), &cfg.beta_levels)?;
    let metrics = toy_metrics(&sw.reports, cfg.gamma);
    Ok(ToyRun {
        data,
        training: outcome.metadata(&train_cfg),
        model: outcome.model,
        epoch_losses: outcome.epoch_losses,
        reports: sw.reports,
        metrics,
    })
}

pub fn sweep_chart(title: &str, reports: &[UncertaintyReport], train_range: Option<(f64, f64)>) -> LineChart {
    let x: Vec<f64> = reports.iter().map(|r| r.x[0]).collect();
    let sd: Vec<f64> = reports.iter().map(|r| r.total_variance.sqrt()).collect();
    let pts = |f: &dyn Fn(&UncertaintyReport) -> f64| -> Vec<(f64, f64)> { reports.iter().map(|r| (r.x[0], f(r))).collect() };
    LineChart {
        title: title.to_string(),
        x_label: "x".into(),
        y_label: "value".into(),
        series: vec![
            Series {
                label: "mean".into(),
                color: "#1f77b4".into(),
                points: pts(&|r| r.mean),
            },
            Series {
                label: "|cov|".into(),
                color: "#d62728".into(),
                points: pts(&|r| r.abs_epistemic),
            },
            Series {
                label: "aleatoric".into(),
                color: "#2ca02c".into(),
                points: pts(&|r| r.aleatoric),
            },
        ],
        bands: vec![Band {
            label: "mean +- 2 sd".into(),
            color: "#1f77b4".into(),
            lower: reports.iter().zip(&sd).map(|(r, s)| r.mean - 2.0 * s).collect(),
            upper: reports.iter().zip(&sd).map(|(r, s)| r.mean + 2.0 * s).collect(),
            x,
        }],
        spans: train_range.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub config: ToyConfig,
    pub triplets: ToyMetrics,
    pub couples: ToyMetrics,
    pub triplets_final_loss: f64,
    pub couples_final_loss: f64,
}

/// Runs the full toy pipeline for triplets and couples, writing datasets,
/// model bundles, sweep CSVs, SVG charts and `summary.json` into `out_dir`.
pub fn reproduce_toy(cfg: &ToyConfig, out_dir: &Path) -> Result<ToySummary> {
    fs::create_dir_all(out_dir)?;
    let mut metrics = BTreeMap::new();
    let mut losses = BTreeMap::new();
    for (name, couples) in [("triplets", false), ("couples", true)] {
        log::info!("training on {name} (seed {})", cfg.seed);
        let run = toy_run(cfg, couples)?;
        save_csv(&run.data, &out_dir.join(format!("data_{name}.csv")))?;
        let mut meta = DatasetMetadata::describe(&run.data);
        meta.seed = Some(cfg.seed);
        meta.generator = Some(cfg.data(couples));
        meta.scaler = Some(run.model.scaler().clone());
        meta.save(&out_dir.join(format!("data_{name}.json")))?;
        run.model
            .to_bundle(Some(cfg.seed), Some(run.training.clone()))
            .save(&out_dir.join(format!("model_{name}.json")))?;
        write_loss_csv(&run.epoch_losses, &out_dir.join(format!("loss_{name}.csv")))?;
        let mut w = BufWriter::new(File::create(out_dir.join(format!("sweep_{name}.csv")))?);
        write_reports_csv(run.model.feature_names(), &run.reports, &mut w)?;
        w.flush()?;
        let chart = sweep_chart(&format!("Trained on {name}"), &run.reports, Some((-6.0, 6.0)));
        fs::write(out_dir.join(format!("sweep_{name}.svg")), chart.to_svg())?;
        metrics.insert(name, run.metrics);
        losses.insert(name, *run.epoch_losses.last().unwrap_or(&f64::NAN));
    }
    let summary = ToySummary {
        config: cfg.clone(),
        triplets: metrics["triplets"],
        couples: metrics["couples"],
        triplets_final_loss: losses["triplets"],
        couples_final_loss: losses["couples"],
    };
    let mut w = BufWriter::new(File::create(out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(summary)
}

fn write_loss_csv(losses: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{},{l}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Fit and uncertainty statistics of a model on one data split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub rows: usize,
    /// Coefficient of determination of the predicted mean against every
    /// observed outcome (`y1`, and `y2` outside couples mode).
    pub r2: f64,
    /// Mean `|cov|` over the rows.
    pub mean_abs_cov: f64,
}

pub fn r_squared(predicted: &[f64], targets: &[f64]) -> f64 {
    let ss_res: f64 = predicted.iter().zip(targets).map(|(p, y)| (y - p).powi(2)).sum();
    if ss_res == 0.0 {
        return 1.0;
    }
    let mean = targets.iter().mean();
    let ss_tot: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn split_metrics(model: &FeedbackRegressor, ds: &TripletDataset, est: &EstimatorConfig) -> Result<SplitMetrics> {
    if ds.is_empty() {
        return Err(input("split has no rows"));
    }
    // Rows sharing an input share one estimate.
    let mut distinct: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for r in ds.rows() {
        *distinct.entry(r.x.iter().map(|v| v.to_bits()).collect()).or_default() += 1;
    }
    let keys: Vec<Vec<f64>> = distinct.keys().map(|k| k.iter().map(|b| f64::from_bits(*b)).collect()).collect();
    let sw = sweep(model, &keys, est, &[])?;
    let abs_cov: f64 = sw
        .reports
        .iter()
        .zip(distinct.values())
        .map(|(r, n)| r.abs_epistemic * *n as f64)
        .sum::<f64>()
        / ds.len() as f64;

    let by_key: BTreeMap<Vec<u64>, f64> = distinct.keys().cloned().zip(sw.reports.iter().map(|r| r.mean)).collect();
    let (mut predicted, mut targets) = (Vec::new(), Vec::new());
    for r in ds.rows() {
        let mu = by_key[&r.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()];
        predicted.push(mu);
        targets.push(r.y1);
        if !ds.couples_mode() {
            predicted.push(mu);
            targets.push(r.y2);
        }
    }
    Ok(SplitMetrics {
        rows: ds.len(),
        r2: r_squared(&predicted, &targets),
        mean_abs_cov: abs_cov,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub seed: u64,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    /// `(test - train) / train` of the mean `|cov|`, in percent.
    pub difference_pct: f64,
}

impl TableRow {
    pub fn new(seed: u64, train: SplitMetrics, test: SplitMetrics) -> Self {
        Self {
            seed,
            train,
            test,
            difference_pct: 100.0 * (test.mean_abs_cov - train.mean_abs_cov) / train.mean_abs_cov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let sd = if v.len() > 1 { v.iter().std_dev() } else { 0.0 };
        Self {
            mean: v.iter().mean(),
            sd,
        }
    }
}

impl std::fmt::Display for MeanSd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} +- {:.4}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<TableRow>,
    pub train_r2: MeanSd,
    pub test_r2: MeanSd,
    pub train_abs_cov: MeanSd,
    pub test_abs_cov: MeanSd,
    pub difference_pct: MeanSd,
}

impl ReportTable {
    pub fn from_rows(rows: Vec<TableRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(input("a table needs at least one run"));
        }
        Ok(Self {
            train_r2: MeanSd::of(rows.iter().map(|r| r.train.r2)),
            test_r2: MeanSd::of(rows.iter().map(|r| r.test.r2)),
            train_abs_cov: MeanSd::of(rows.iter().map(|r| r.train.mean_abs_cov)),
            test_abs_cov: MeanSd::of(rows.iter().map(|r| r.test.mean_abs_cov)),
            difference_pct: MeanSd::of(rows.iter().map(|r| r.difference_pct)),
            rows,
        })
    }

    /// CSV with one line per run plus `mean` and `sd` lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "run,train_r2,test_r2,train_abs_cov,test_abs_cov,difference_pct")?;
        for r in &self.rows {
            writeln!(
                w,
                "seed_{},{},{},{},{},{}",
                r.seed, r.train.r2, r.test.r2, r.train.mean_abs_cov, r.test.mean_abs_cov, r.difference_pct
            )?;
        }
        let cols = [self.train_r2, self.test_r2, self.train_abs_cov, self.test_abs_cov, self.difference_pct];
        writeln!(w, "mean,{}", cols.map(|c| c.mean.to_string()).join(","))?;
        writeln!(w, "sd,{}", cols.map(|c| c.sd.to_string()).join(","))?;
        Ok(())
    }
}
