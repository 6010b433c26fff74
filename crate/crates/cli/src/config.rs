//! TOML experiment configuration. Every field is optional; command-line
//! flags override whatever the file sets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use zigzag_core::data::surrogate::SurrogateConfig;
use zigzag_core::data::SyntheticConfig;
use zigzag_core::experiment::{GridSpec, ToyConfig};
use zigzag_core::train::TrainConfig;
use zigzag_core::{EstimatorConfig, FeedbackMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds of aggregate runs (report tables); the first one drives single runs.
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    pub beta_levels: Vec<f64>,
    pub data: SyntheticConfig,
    pub surrogate: SurrogateConfig,
    pub train: TrainConfig,
    pub estimator: EstimatorConfig,
    pub grid: GridSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: None,
            beta_levels: vec![0.1, 0.25, 0.5],
            data: SyntheticConfig::default(),
            surrogate: SurrogateConfig::default(),
            train: TrainConfig::default(),
            estimator: EstimatorConfig::default(),
            grid: GridSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        if self.estimator.samples == 0 {
            bail!("estimator.samples must be at least 1");
        }
        if let Some(dir) = &self.out_dir {
            if dir.is_file() {
                bail!("out_dir {} is an existing file", dir.display());
            }
        }
        Ok(())
    }

    pub fn toy(&self, seed: u64) -> ToyConfig {
        ToyConfig {
            seed,
            n: self.data.n,
            gamma: self.data.gamma,
            train: self.train.clone(),
            samples: self.estimator.samples,
            form: self.estimator.form,
            grid: self.grid,
            beta_levels: self.beta_levels.clone(),
        }
    }
}

/// `drop-weights` or `constant:<y0>`.
pub fn parse_feedback_mode(s: &str) -> std::result::Result<FeedbackMode, String> {
    if s == "drop-weights" {
        return Ok(FeedbackMode::DropWeights);
    }
    if let Some(v) = s.strip_prefix("constant:") {
        let y0: f64 = v.parse().map_err(|_| format!("invalid y0 '{v}'"))?;
        if !y0.is_finite() {
            return Err("y0 must be finite".into());
        }
        return Ok(FeedbackMode::ConstantY0 { y0 });
    }
    Err(format!("unknown feedback mode '{s}' (expected drop-weights or constant:<y0>)"))
}
