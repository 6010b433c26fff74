//! Triplet datasets `(x, y1, y2)`: synthetic generation, replicate pairing,
//! standardization and CSV/JSON persistence.

mod csv_io;
mod scaler;
pub mod surrogate;

pub use csv_io::{load_csv, save_csv, DatasetMetadata};
pub use scaler::Standardizer;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// One training record: an input and two outcomes observed under the same condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub x: Vec<f64>,
    pub y1: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletDataset {
    rows: Vec<Triplet>,
    feature_names: Vec<String>,
    couples_mode: bool,
}

impl TripletDataset {
    /// Builds a dataset, checking that every row has the same finite input width.
    ///
    /// In couples mode `y2` is overwritten with `y1`.
    pub fn new(feature_names: Vec<String>, mut rows: Vec<Triplet>, couples_mode: bool) -> Result<Self> {
        let dim = feature_names.len();
        if dim == 0 {
            return Err(input("a dataset needs at least one feature"));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            if row.x.len() != dim {
                return Err(input(format!(
                    "row {i} has {} features, expected {dim}",
                    row.x.len()
                )));
            }
            if couples_mode {
                row.y2 = row.y1;
            }
            if !(row.x.iter().all(|v| v.is_finite()) && row.y1.is_finite() && row.y2.is_finite()) {
                return Err(input(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(Self {
            rows,
            feature_names,
            couples_mode,
        })
    }

    pub fn rows(&self) -> &[Triplet] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn input_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn couples_mode(&self) -> bool {
        self.couples_mode
    }

    /// The same inputs with `y2` replaced by `y1`.
    pub fn to_couples(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| Triplet {
                x: r.x.clone(),
                y1: r.y1,
                y2: r.y1,
            })
            .collect();
        Self {
            rows,
            feature_names: self.feature_names.clone(),
            couples_mode: true,
        }
    }

    /// Rows whose first feature satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Triplet) -> bool) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            feature_names: self.feature_names.clone(),
            couples_mode: self.couples_mode,
        }
    }
}

/// Settings of the one-dimensional heteroscedastic toy problem
/// `y = x sin x + N(0, (gamma exp(-x^2/2))^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub gamma: f64,
    pub x_range: (f64, f64),
    pub seed: u64,
    pub couples_mode: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            gamma: 1.5,
            x_range: (-6.0, 6.0),
            seed: 0,
            couples_mode: false,
        }
    }
}

/// Ground-truth mean of the toy problem.
pub fn toy_mean(x: f64) -> f64 {
    x * x.sin()
}

/// Ground-truth noise standard deviation of the toy problem.
pub fn toy_std(x: f64, gamma: f64) -> f64 {
    gamma * (-x * x / 2.0).exp()
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<TripletDataset> {
    if cfg.n == 0 {
        return Err(input("sample count must be at least 1"));
    }
    if !(cfg.gamma >= 0.0) {
        return Err(input("gamma must be non-negative"));
    }
    let (lo, hi) = cfg.x_range;
    if !(lo < hi) {
        return Err(input("x_range must satisfy lo < hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Both draws are always consumed so that couples and triplets generated
    // with one seed share their inputs and first outcomes.
    let rows = (0..cfg.n)
        .map(|_| {
            let x: f64 = rng.random_range(lo..hi);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let (m, s) = (toy_mean(x), toy_std(x, cfg.gamma));
            let y1 = m + s * z1;
            let y2 = if cfg.couples_mode { y1 } else { m + s * z2 };
            Triplet { x: vec![x], y1, y2 }
        })
        .collect();
    TripletDataset::new(vec!["x".into()], rows, cfg.couples_mode)
}

/// Repeated measurements taken under one experimental condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateGroup {
    pub x: Vec<f64>,
    pub measurements: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairingSummary {
    /// Groups dropped because they had fewer than two measurements.
    pub skipped: usize,
    /// Groups with fewer than `2k` measurements, paired with replacement.
    pub with_replacement: usize,
}

/// Turns replicate groups into triplets.
///
/// With at least `2k` measurements a group is shuffled and split into two
/// disjoint sets of `k`, paired index by index. Smaller groups fall back to
/// drawing `k` pairs of distinct measurements with replacement.
pub fn pair_replicates(
    feature_names: Vec<String>,
    groups: &[ReplicateGroup],
    k: usize,
    seed: u64,
) -> Result<(TripletDataset, PairingSummary)> {
    if k == 0 {
        return Err(input("pairs per group must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = PairingSummary::default();
    let mut rows = Vec::with_capacity(groups.len() * k);
    for (gi, group) in groups.iter().enumerate() {
        let n = group.measurements.len();
        if n < 2 {
            warn!("replicate group {gi} has {n} measurement(s); skipped");
            summary.skipped += 1;
            continue;
        }
        if n >= 2 * k {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (a, rest) = idx.split_at(k);
            for (ia, ib) in a.iter().zip(&rest[..k]) {
                rows.push(Triplet {
                    x: group.x.clone(),
                    y1: group.measurements[*ia],
                    y2: group.measurements[*ib],
                });
            }
        } else {
            summary.with_replacement += 1;
            for _ in 0..k {
                let ia = rng.random_range(0..n);
                let mut ib = rng.random_range(0..n - 1);
                if ib >= ia {
                    ib += 1;
                }
                rows.push(Triplet {
                    x: group.x.clone(),
                    y1: group.measurements[ia],
                    y2: group.measurements[ib],
                });
            }
        }
    }
    if summary.with_replacement > 0 {
        warn!(
            "{} replicate group(s) had fewer than {} measurements and were paired with replacement",
            summary.with_replacement,
            2 * k
        );
    }
    Ok((TripletDataset::new(feature_names, rows, false)?, summary))
}
