//! Quantile and variance calibration diagnostics for Gaussian predictions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{input, Result};
use crate::nn::GaussianPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub coverage: f64,
}

/// Fraction of targets strictly inside the central Gaussian interval of each
/// nominal level.
pub fn quantile_calibration(preds: &[GaussianPrediction], ys: &[f64], levels: &[f64]) -> Result<Vec<QuantilePoint>> {
    check_lengths(preds, ys)?;
    let std = Normal::standard();
    levels
        .iter()
        .map(|&level| {
            if !(0.0..=1.0).contains(&level) {
                return Err(input(format!("level {level} outside [0, 1]")));
            }
            let z = std.inverse_cdf(0.5 + 0.5 * level);
            let inside = preds
                .iter()
                .zip(ys)
                .filter(|(p, y)| (*y - p.mean).abs() < z * p.std_dev())
                .count();
            Ok(QuantilePoint {
                level,
                coverage: inside as f64 / ys.len() as f64,
            })
        })
        .collect()
}

fn check_lengths(preds: &[GaussianPrediction], ys: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(input("calibration needs at least one prediction"));
    }
    if preds.len() != ys.len() {
        return Err(input(format!("{} predictions but {} targets", preds.len(), ys.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceBin {
    /// Position along the mean axis (always 0 for the weak variant).
    pub mean_bin: usize,
    pub variance_bin: usize,
    pub count: usize,
    pub mean_predicted_variance: f64,
    pub mean_squared_error: f64,
}

impl VarianceBin {
    /// Empirical squared error over predicted variance.
    pub fn ratio(&self) -> f64 {
        self.mean_squared_error / self.mean_predicted_variance
    }
}

/// Splits `idx` into `n` consecutive equal-count chunks after sorting by `key`.
fn equal_count_chunks(mut idx: Vec<usize>, n: usize, key: impl Fn(usize) -> f64) -> Vec<Vec<usize>> {
    idx.sort_by(|a, b| key(*a).total_cmp(&key(*b)).then(a.cmp(b)));
    let len = idx.len();
    (0..n)
        .map(|k| idx[k * len / n..(k + 1) * len / n].to_vec())
        .collect()
}

/// Equal-count variance bins.
///
/// The weak variant sorts on predicted variance into `n_bins` bins. The strong
/// variant first splits on the predicted mean into `n_bins` groups, then each
/// group on predicted variance into `n_bins`, giving `n_bins^2` bins that each
/// hold predictions similar in both parameters.
pub fn variance_calibration_bins(
    preds: &[GaussianPrediction],
    ys: &[f64],
    n_bins: usize,
    strong: bool,
) -> Result<Vec<VarianceBin>> {
    check_lengths(preds, ys)?;
    let total_bins = if strong { n_bins * n_bins } else { n_bins };
    if n_bins == 0 || preds.len() < total_bins {
        return Err(input(format!(
            "{} samples cannot fill {total_bins} bins",
            preds.len()
        )));
    }
    let all: Vec<usize> = (0..preds.len()).collect();
    let groups = if strong {
        equal_count_chunks(all, n_bins, |i| preds[i].mean)
    } else {
        vec![all]
    };
    let mut bins = Vec::with_capacity(total_bins);
    for (g, group) in groups.into_iter().enumerate() {
        for (v, chunk) in equal_count_chunks(group, n_bins, |i| preds[i].variance)
            .into_iter()
            .enumerate()
        {
            let n = chunk.len() as f64;
            bins.push(VarianceBin {
                mean_bin: g,
                variance_bin: v,
                count: chunk.len(),
                mean_predicted_variance: chunk.iter().map(|&i| preds[i].variance).sum::<f64>() / n,
                mean_squared_error: chunk.iter().map(|&i| (preds[i].mean - ys[i]).powi(2)).sum::<f64>() / n,
            });
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub quantiles: Vec<QuantilePoint>,
    pub weak_bins: Vec<VarianceBin>,
    pub strong_bins: Vec<VarianceBin>,
    pub max_coverage_error: f64,
    pub max_weak_mismatch: f64,
    pub max_strong_mismatch: f64,
}

pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub fn calibration_report(
    preds: &[GaussianPrediction],
    ys: &[f64],
    levels: &[f64],
    weak_bins: usize,
    strong_bins: usize,
) -> Result<CalibrationReport> {
    let quantiles = quantile_calibration(preds, ys, levels)?;
    let weak = variance_calibration_bins(preds, ys, weak_bins, false)?;
    let strong = variance_calibration_bins(preds, ys, strong_bins, true)?;
    let mismatch = |bins: &[VarianceBin]| bins.iter().map(|b| (b.ratio() - 1.0).abs()).fold(0.0, f64::max);
    Ok(CalibrationReport {
        max_coverage_error: quantiles
            .iter()
            .map(|q| (q.coverage - q.level).abs())
            .fold(0.0, f64::max),
        max_weak_mismatch: mismatch(&weak),
        max_strong_mismatch: mismatch(&strong),
        quantiles,
        weak_bins: weak,
        strong_bins: strong,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Heteroscedastic predictions and targets drawn exactly from them.
    fn self_consistent(n: usize, seed: u64) -> (Vec<GaussianPrediction>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<GaussianPrediction> = (0..n)
            .map(|_| GaussianPrediction {
                mean: rng.random_range(-3.0..3.0),
                variance: rng.random_range(0.1..4.0),
            })
            .collect();
        let ys = preds
            .iter()
            .map(|p| p.mean + p.std_dev() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (preds, ys)
    }

    #[test]
    fn coverage_of_exact_draws() {
        let (preds, ys) = self_consistent(100_000, 1);
        let curve = quantile_calibration(&preds, &ys, &DEFAULT_LEVELS).unwrap();
        for q in curve {
            let se = (q.level * (1.0 - q.level) / 1e5).sqrt();
            assert!((q.coverage - q.level).abs() < 4.0 * se, "{q:?}");
        }
    }

    #[test]
    fn inflated_variance_over_covers() {
        let (mut preds, ys) = self_consistent(100_000, 2);
        for p in &mut preds {
            p.variance *= 100.0;
        }
        let n = Normal::standard();
        let curve = quantile_calibration(&preds, &ys, &DEFAULT_LEVELS).unwrap();
        for q in curve {
            // Intervals ten times too wide: P(|Z| < 10 z_level).
            let expected = 2.0 * n.cdf(10.0 * n.inverse_cdf(0.5 + 0.5 * q.level)) - 1.0;
            assert!((q.coverage - expected).abs() < 0.01, "{q:?} vs {expected}");
            assert!(q.coverage >= q.level);
            if q.level >= 0.2 {
                assert!(q.coverage > 0.98);
            }
        }
    }

    #[test]
    fn level_zero_and_one() {
        let (preds, ys) = self_consistent(1000, 3);
        let c = quantile_calibration(&preds, &ys, &[0.0, 1.0]).unwrap();
        assert_eq!(c[0].coverage, 0.0);
        assert_eq!(c[1].coverage, 1.0);
        assert!(quantile_calibration(&preds, &ys, &[1.5]).is_err());
        assert!(quantile_calibration(&[], &[], &[0.5]).is_err());
        assert!(quantile_calibration(&preds, &ys[1..], &[0.5]).is_err());
    }

    #[test]
    fn bins_of_exact_draws_are_calibrated() {
        let (preds, ys) = self_consistent(100_000, 4);
        let weak = variance_calibration_bins(&preds, &ys, 10, false).unwrap();
        assert_eq!(weak.len(), 10);
        assert_eq!(weak.iter().map(|b| b.count).sum::<usize>(), 100_000);
        for b in &weak {
            assert!((0.9..=1.1).contains(&b.ratio()), "{b:?}");
        }
        let strong = variance_calibration_bins(&preds, &ys, 5, true).unwrap();
        assert_eq!(strong.len(), 25);
        assert_eq!(strong.iter().map(|b| b.count).sum::<usize>(), 100_000);
        for b in &strong {
            assert!((0.9..=1.1).contains(&b.ratio()), "{b:?}");
        }
    }

    #[test]
    fn constant_mean_explains_errors_away() {
        // Targets are +-2 plus unit noise; the model predicts mean 0 and
        // absorbs the whole spread into its variance.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50_000;
        let ys: Vec<f64> = (0..n)
            .map(|i| {
                let centre = if i % 2 == 0 { 2.0 } else { -2.0 };
                centre + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let preds = vec![
            GaussianPrediction {
                mean: 0.0,
                variance: 5.0,
            };
            n
        ];
        for strong in [false, true] {
            let bins = variance_calibration_bins(&preds, &ys, 5, strong).unwrap();
            assert!(bins.iter().all(|b| (b.ratio() - 1.0).abs() < 0.1), "strong={strong}");
        }
        let mse = ys.iter().map(|y| y * y).sum::<f64>() / n as f64;
        assert!(mse > 4.5, "the mean prediction is useless: mse {mse}");
    }

    #[test]
    fn single_bin_is_global_mse() {
        let (preds, ys) = self_consistent(500, 6);
        let b = &variance_calibration_bins(&preds, &ys, 1, false).unwrap()[0];
        let mse = preds.iter().zip(&ys).map(|(p, y)| (p.mean - y).powi(2)).sum::<f64>() / 500.0;
        let var = preds.iter().map(|p| p.variance).sum::<f64>() / 500.0;
        assert!((b.mean_squared_error - mse).abs() < 1e-12);
        assert!((b.mean_predicted_variance - var).abs() < 1e-12);
        assert!(variance_calibration_bins(&preds[..3], &ys[..3], 2, true).is_err());
        assert!(variance_calibration_bins(&preds, &ys, 0, false).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let (preds, ys) = self_consistent(2000, 7);
        let a = calibration_report(&preds, &ys, &DEFAULT_LEVELS, 10, 5).unwrap();
        let b = calibration_report(&preds, &ys, &DEFAULT_LEVELS, 10, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.quantiles.iter().all(|q| (0.0..=1.0).contains(&q.coverage)));
    }
}
