//! A replicate-measurement surrogate with an extrapolation test domain.
//!
//! Conditions are `(angle, speed)` pairs. Each condition is measured many
//! times with condition-dependent noise; the measurements are then paired into
//! triplets. The test split uses a speed below every training speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{pair_replicates, PairingSummary, ReplicateGroup, TripletDataset};
use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub angle_min: f64,
    pub angle_max: f64,
    pub angle_step: f64,
    pub train_speeds: Vec<f64>,
    pub test_speeds: Vec<f64>,
    /// Measurements recorded per condition.
    pub measurements: usize,
    /// Triplets drawn per condition.
    pub pairs: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            angle_min: -11.0,
            angle_max: 11.0,
            angle_step: 0.5,
            train_speeds: vec![7.3, 9.1, 11.9, 14.1],
            test_speeds: vec![4.7],
            measurements: 24,
            pairs: 6,
            seed: 0,
        }
    }
}

/// Angle (degrees) beyond which the response saturates and turns noisy.
fn stall_angle(speed: f64) -> f64 {
    4.0 + 0.55 * speed
}

/// Mean response of a condition.
pub fn surrogate_mean(angle: f64, speed: f64) -> f64 {
    let a = angle.to_radians();
    let r = angle / stall_angle(speed);
    2.0 * std::f64::consts::PI * a * (-0.5 * r.powi(4)).exp() + 0.02 * speed.ln()
}

/// Noise standard deviation of a condition.
pub fn surrogate_std(angle: f64, speed: f64) -> f64 {
    let r4 = (angle / stall_angle(speed)).powi(4);
    (0.02 + 0.1 * r4 / (1.0 + r4)) * (10.0 / speed).sqrt()
}

#[derive(Debug, Clone)]
pub struct SurrogateSplits {
    pub train: TripletDataset,
    pub test: TripletDataset,
    pub pairing: PairingSummary,
}

fn groups(cfg: &SurrogateConfig, speeds: &[f64], rng: &mut ChaCha8Rng) -> Vec<ReplicateGroup> {
    let n_angles = ((cfg.angle_max - cfg.angle_min) / cfg.angle_step).round() as usize + 1;
    let mut out = Vec::with_capacity(n_angles * speeds.len());
    for &speed in speeds {
        for i in 0..n_angles {
            let angle = cfg.angle_min + i as f64 * cfg.angle_step;
            let (m, s) = (surrogate_mean(angle, speed), surrogate_std(angle, speed));
            let measurements = (0..cfg.measurements)
                .map(|_| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            out.push(ReplicateGroup {
                x: vec![angle, speed],
                measurements,
            });
        }
    }
    out
}

pub fn gen_surrogate(cfg: &SurrogateConfig) -> Result<SurrogateSplits> {
    if !(cfg.angle_step > 0.0 && cfg.angle_max >= cfg.angle_min) {
        return Err(input("invalid angle grid"));
    }
    if cfg.train_speeds.is_empty() || cfg.test_speeds.is_empty() {
        return Err(input("train and test speeds must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names = || vec!["angle".to_string(), "speed".to_string()];
    let train_groups = groups(cfg, &cfg.train_speeds, &mut rng);
    let test_groups = groups(cfg, &cfg.test_speeds, &mut rng);
    let (train, s1) = pair_replicates(names(), &train_groups, cfg.pairs, rng.random())?;
    let (test, s2) = pair_replicates(names(), &test_groups, cfg.pairs, rng.random())?;
    Ok(SurrogateSplits {
        train,
        test,
        pairing: PairingSummary {
            skipped: s1.skipped + s2.skipped,
            with_replacement: s1.with_replacement + s2.with_replacement,
        },
    })
}
