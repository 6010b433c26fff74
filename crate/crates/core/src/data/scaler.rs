use log::warn;
use serde::{Deserialize, Serialize};

use super::{Triplet, TripletDataset};
use crate::error::{input, Result};

/// Per-feature affine standardization; `y1` and `y2` share one output scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn mean_and_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Spread indistinguishable from rounding noise around `mean`.
fn is_degenerate(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

impl Standardizer {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; input_dim],
            x_scale: vec![1.0; input_dim],
            y_mean: 0.0,
            y_scale: 1.0,
        }
    }

    /// Fits zero-mean, unit-(population)-variance maps on `ds`.
    ///
    /// Zero-variance columns are left unchanged (mean 0, scale 1).
    pub fn fit(ds: &TripletDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(input("cannot fit a scaler on an empty dataset"));
        }
        let mut x_mean = Vec::with_capacity(ds.input_dim());
        let mut x_scale = Vec::with_capacity(ds.input_dim());
        for j in 0..ds.input_dim() {
            let (m, s) = mean_and_sd(ds.rows().iter().map(move |r| r.x[j]));
            if !is_degenerate(m, s) {
                x_mean.push(m);
                x_scale.push(s);
            } else {
                warn!("feature '{}' has zero variance; left unscaled", ds.feature_names()[j]);
                x_mean.push(0.0);
                x_scale.push(1.0);
            }
        }
        let ys = ds.rows().iter().flat_map(|r| [r.y1, r.y2]);
        let (mut y_mean, mut y_scale) = mean_and_sd(ys);
        if is_degenerate(y_mean, y_scale) {
            warn!("outcome has zero variance; left unscaled");
            (y_mean, y_scale) = (0.0, 1.0);
        }
        Ok(Self {
            x_mean,
            x_scale,
            y_mean,
            y_scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_mean.len() != self.x_scale.len() {
            return Err(input("scaler mean and scale lengths differ"));
        }
        let ok = self
            .x_scale
            .iter()
            .chain(std::iter::once(&self.y_scale))
            .all(|s| s.is_finite() && *s > 0.0);
        if !ok {
            return Err(input("scaler scales must be finite and strictly positive"));
        }
        Ok(())
    }

    pub fn x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn x_inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn y_inverse(&self, z: f64) -> f64 {
        z * self.y_scale + self.y_mean
    }

    /// Maps a variance in standardized output units back to raw units.
    pub fn variance_inverse(&self, v: f64) -> f64 {
        v * self.y_scale * self.y_scale
    }

    pub fn apply(&self, ds: &TripletDataset) -> TripletDataset {
        self.map(ds, |r| Triplet {
            x: self.x(&r.x),
            y1: self.y(r.y1),
            y2: self.y(r.y2),
        })
    }

    pub fn invert(&self, ds: &TripletDataset) -> TripletDataset {
        self.map(ds, |r| Triplet {
            x: self.x_inverse(&r.x),
            y1: self.y_inverse(r.y1),
            y2: self.y_inverse(r.y2),
        })
    }

    fn map(&self, ds: &TripletDataset, f: impl Fn(&Triplet) -> Triplet) -> TripletDataset {
        TripletDataset {
            rows: ds.rows().iter().map(f).collect(),
            feature_names: ds.feature_names().to_vec(),
            couples_mode: ds.couples_mode(),
        }
    }
}
