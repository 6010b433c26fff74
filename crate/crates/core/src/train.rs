//! Minibatch training of a [`FeedbackRegressor`] on the pair loss.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Standardizer, TripletDataset};
use crate::error::{input, Error, Result};
use crate::feedback::{FeedbackMode, FeedbackRegressor, ModelBundle};
use crate::losses::{LossConfig, PairLossWorkspace};
use crate::nn::{AdamConfig, Gradients, OptimizerState, TrainingMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives initialization, shuffling and dropout masks.
    pub seed: u64,
    pub feedback_mode: FeedbackMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            dropout: 0.05,
            beta: 0.5,
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 64,
            seed: 0,
            feedback_mode: FeedbackMode::DropWeights,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(input("epochs and batch_size must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(input("hidden widths must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(input("learning rate must be finite and non-negative"));
        }
        LossConfig::with_beta(self.beta).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FeedbackRegressor,
    /// Mean training pair loss of every epoch (dropout active).
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: u64,
}

impl TrainOutcome {
    pub fn metadata(&self, cfg: &TrainConfig) -> TrainingMetadata {
        TrainingMetadata {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            beta: cfg.beta,
            optimizer_steps: self.optimizer_steps,
            final_loss: self.epoch_losses.last().copied().unwrap_or(f64::NAN),
        }
    }

    pub fn bundle(&self, cfg: &TrainConfig) -> ModelBundle {
        self.model.to_bundle(Some(cfg.seed), Some(self.metadata(cfg)))
    }
}

/// Minimizes the mean pair loss with Adam.
///
/// Every sample contributes `-log p(y1 | x) - log p(y2 | y1, x)` (beta
/// weighted) in standardized units; in couples mode `y2 = y1`.
pub fn train(ds: &TripletDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(input("cannot train on an empty dataset"));
    }
    let loss_cfg = LossConfig::with_beta(cfg.beta)?;
    let scaler = Standardizer::fit(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = FeedbackRegressor::init(&cfg.hidden, cfg.dropout, cfg.feedback_mode, scaler, &mut rng)?
        .with_feature_names(ds.feature_names().to_vec())?;
    let standardized = model.scaler().apply(ds);
    let rows = standardized.rows();

    let mut opt = OptimizerState::new(
        model.net(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut grads = Gradients::zeros_like(model.net());
    let mut ws = PairLossWorkspace::default();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            grads.reset();
            let scale = 1.0 / idx.len() as f64;
            for &i in idx {
                let r = &rows[i];
                let loss = ws.evaluate(
                    &model,
                    &r.x,
                    r.y1,
                    r.y2,
                    &loss_cfg,
                    Some(&mut rng as &mut dyn RngCore),
                    Some((&mut grads, scale)),
                );
                let loss = loss.map_err(|e| at(epoch, batch, e))?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {batch} (sample {i})"
                    )));
                }
                epoch_sum += loss;
            }
            opt.step(model.net_mut(), &grads).map_err(|e| at(epoch, batch, e))?;
        }
        let mean = epoch_sum / rows.len() as f64;
        log::debug!("epoch {epoch}: mean pair loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        optimizer_steps: opt.step_count(),
    })
}

fn at(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}
