//! Monte Carlo estimation of the covariance between a model's two answers,
//! and the total / aleatoric / epistemic split built on it.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::feedback::FeedbackRegressor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorForm {
    /// `mean(y_m * mu(x | y_m)) - mu(x)^2`.
    Paper,
    /// `mean((y_m - mu(x)) * (mu(x | y_m) - mu(x)))`.
    Centered,
}

impl std::str::FromStr for EstimatorForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(Self::Paper),
            "centered" => Ok(Self::Centered),
            other => Err(format!("unknown estimator form '{other}' (expected paper|centered)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub samples: usize,
    pub form: EstimatorForm,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            samples: 128,
            form: EstimatorForm::Centered,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub cov: f64,
    /// Standard error of `cov`; NaN for a single draw.
    pub stderr: f64,
}

/// Estimates `Cov(Y1, Y2 | x)` under the model's joint `p(y1 | x) p(y2 | y1, x)`.
pub fn epistemic_covariance(
    model: &FeedbackRegressor,
    x: &[f64],
    cfg: &EstimatorConfig,
) -> Result<CovarianceEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    covariance_with_rng(model, x, cfg.samples, cfg.form, &mut rng)
}

pub fn covariance_with_rng(
    model: &FeedbackRegressor,
    x: &[f64],
    samples: usize,
    form: EstimatorForm,
    rng: &mut ChaCha8Rng,
) -> Result<CovarianceEstimate> {
    if samples == 0 {
        return Err(input("estimator needs at least one sample"));
    }
    let mu = model.predict_marginal(x)?.mean;
    let draws = model.sample_marginal(x, samples, rng)?;
    let conditional = model.predict_conditional_batch(x, &draws)?;
    let terms = draws.iter().zip(&conditional).map(|(y, c)| match form {
        EstimatorForm::Paper => y * c.mean,
        EstimatorForm::Centered => (y - mu) * (c.mean - mu),
    });
    let (mean, var) = mean_and_sample_variance(terms);
    let cov = match form {
        EstimatorForm::Paper => mean - mu * mu,
        EstimatorForm::Centered => mean,
    };
    let stderr = if samples > 1 {
        (var / samples as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(CovarianceEstimate { cov, stderr })
}

/// Welford accumulation; returns `(mean, unbiased variance)`.
fn mean_and_sample_variance(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for v in values {
        n += 1.0;
        let d = v - mean;
        mean += d / n;
        m2 += d * (v - mean);
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// `sqrt(|cov| / beta)`: with probability at least `1 - beta` the true mean
/// lies within this distance of the predicted mean.
pub fn chebyshev_radius(cov: f64, beta: f64) -> f64 {
    (cov.abs() / beta).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub x: Vec<f64>,
    pub mean: f64,
    pub total_variance: f64,
    pub epistemic: f64,
    pub abs_epistemic: f64,
    pub aleatoric: f64,
    pub stderr: f64,
    /// Set when `epistemic > total_variance` forced the aleatoric part to 0.
    pub clamped: bool,
    /// `(beta, radius)` pairs.
    pub chebyshev: Vec<(f64, f64)>,
}

pub fn decompose(
    model: &FeedbackRegressor,
    x: &[f64],
    cfg: &EstimatorConfig,
    beta_levels: &[f64],
) -> Result<UncertaintyReport> {
    if let Some(b) = beta_levels.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
        return Err(input(format!("Chebyshev level {b} outside (0, 1]")));
    }
    let marginal = model.predict_marginal(x)?;
    let est = epistemic_covariance(model, x, cfg)?;
    let residual = marginal.variance - est.cov;
    Ok(UncertaintyReport {
        x: x.to_vec(),
        mean: marginal.mean,
        total_variance: marginal.variance,
        epistemic: est.cov,
        abs_epistemic: est.cov.abs(),
        aleatoric: residual.max(0.0),
        stderr: est.stderr,
        clamped: residual < 0.0,
        chebyshev: beta_levels
            .iter()
            .map(|b| (*b, chebyshev_radius(est.cov, *b)))
            .collect(),
    })
}

/// Uncertainty of a deterministic feedback network from its two passes
/// `f(x)` and `f(x | f(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZigzagUncertainty {
    pub cov: f64,
    pub u: f64,
}

/// `cov = f * f_cond - f^2` and `u = |f_cond - f|`, which equals `|cov / f|`
/// whenever `f != 0`. At `f = 0` the covariance is 0 and `u = |f_cond|`.
pub fn zigzag_uncertainty(f_marginal: f64, f_conditional: f64) -> ZigzagUncertainty {
    ZigzagUncertainty {
        cov: f_marginal * f_conditional - f_marginal * f_marginal,
        u: (f_conditional - f_marginal).abs(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub reports: Vec<UncertaintyReport>,
    pub clamped: usize,
}

/// Decomposes every grid point. Point `i` uses an independent stream derived
/// from `cfg.seed` and `i`, so results do not depend on thread scheduling.
pub fn sweep(
    model: &FeedbackRegressor,
    grid: &[Vec<f64>],
    cfg: &EstimatorConfig,
    beta_levels: &[f64],
) -> Result<Sweep> {
    let reports = grid
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let point_cfg = EstimatorConfig {
                seed: point_seed(cfg.seed, i as u64),
                ..*cfg
            };
            decompose(model, x, &point_cfg, beta_levels)
        })
        .collect::<Result<Vec<_>>>()?;
    let clamped = reports.iter().filter(|r| r.clamped).count();
    if clamped > 0 {
        log::info!("{clamped} of {} grid points had epistemic > total; aleatoric clamped to 0", reports.len());
    }
    Ok(Sweep { reports, clamped })
}

/// SplitMix64 step mixing a base seed with an index.
pub fn point_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Evenly spaced 1-D grid from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo) {
        return Err(input("grid needs step > 0 and hi >= lo"));
    }
    let n = ((hi - lo) / step).round() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

/// CSV with columns `features..., mu, total_var, cov, abs_cov, aleatoric, stderr, clamped`.
pub fn write_reports_csv<W: Write>(
    feature_names: &[String],
    reports: &[UncertaintyReport],
    mut w: W,
) -> Result<()> {
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.extend(["mu", "total_var", "cov", "abs_cov", "aleatoric", "stderr", "clamped"]);
    writeln!(w, "{}", header.join(","))?;
    for r in reports {
        for v in &r.x {
            write!(w, "{v},")?;
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.mean,
            r.total_variance,
            r.epistemic,
            r.abs_epistemic,
            r.aleatoric,
            r.stderr,
            u8::from(r.clamped)
        )?;
    }
    Ok(())
}
