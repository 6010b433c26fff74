//! Gaussian negative log-likelihood, its beta-weighted variant and the pair loss
//! `-log p(y1 | x) - log p(y2 | y1, x)`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::feedback::FeedbackRegressor;
use crate::nn::{head_upstream, ForwardTrace, GaussianPrediction, Gradients, Mode, VARIANCE_FLOOR};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Exponent of the stop-gradient variance weight, in `[0, 1]`.
    pub beta: f64,
    /// Adds `log(2 pi) / 2` to every NLL term.
    pub include_2pi_constant: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            include_2pi_constant: false,
        }
    }
}

impl LossConfig {
    pub fn with_beta(beta: f64) -> Result<Self> {
        let cfg = Self {
            beta,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(input(format!("beta {} outside [0, 1]", self.beta)));
        }
        Ok(())
    }
}

/// Value of one loss term and its gradient with respect to `(mean, variance)`.
///
/// `weight` is the stop-gradient factor `variance^beta`; the gradients are the
/// plain NLL gradients multiplied by it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub weight: f64,
    pub d_mean: f64,
    pub d_variance: f64,
}

/// `log(variance)/2 + (y - mean)^2 / (2 variance)`.
pub fn gaussian_nll(y: f64, mean: f64, variance: f64, include_2pi_constant: bool) -> Result<LossTerm> {
    if !(variance >= VARIANCE_FLOOR) {
        return Err(input(format!(
            "variance {variance} below the floor {VARIANCE_FLOOR}"
        )));
    }
    let r = y - mean;
    let inv = 1.0 / variance;
    let mut value = 0.5 * variance.ln() + 0.5 * r * r * inv;
    if include_2pi_constant {
        value += HALF_LN_2PI;
    }
    Ok(LossTerm {
        value,
        weight: 1.0,
        d_mean: -r * inv,
        d_variance: 0.5 * inv - 0.5 * r * r * inv * inv,
    })
}

pub fn beta_nll(y: f64, mean: f64, variance: f64, cfg: &LossConfig) -> Result<LossTerm> {
    cfg.validate()?;
    let plain = gaussian_nll(y, mean, variance, cfg.include_2pi_constant)?;
    let weight = if cfg.beta == 0.0 { 1.0 } else { variance.powf(cfg.beta) };
    Ok(LossTerm {
        value: weight * plain.value,
        weight,
        d_mean: weight * plain.d_mean,
        d_variance: weight * plain.d_variance,
    })
}

/// Pair loss of `model` on one raw triplet, with dropout disabled.
///
/// Both terms are evaluated in the model's standardized output units, which is
/// the scale the model is trained on.
pub fn pair_nll(model: &FeedbackRegressor, x: &[f64], y1: f64, y2: f64, cfg: &LossConfig) -> Result<f64> {
    let s = model.scaler();
    let x_std = s.x(x);
    let mut ws = PairLossWorkspace::default();
    ws.evaluate(model, &x_std, s.y(y1), s.y(y2), cfg, None, None)
}

/// Reusable forward traces for evaluating and differentiating the pair loss.
#[derive(Debug, Default)]
pub struct PairLossWorkspace {
    marginal: ForwardTrace,
    conditional: ForwardTrace,
}

impl PairLossWorkspace {
    /// Pair loss on standardized values.
    ///
    /// With `rng` set, dropout is active (independent masks per branch). With
    /// `grads` set, `scale` times the loss gradient is accumulated into it.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &mut self,
        model: &FeedbackRegressor,
        x_std: &[f64],
        y1_std: f64,
        y2_std: f64,
        cfg: &LossConfig,
        mut rng: Option<&mut dyn RngCore>,
        grads: Option<(&mut Gradients, f64)>,
    ) -> Result<f64> {
        if x_std.len() != model.input_dim() {
            return Err(input("input width does not match the model"));
        }
        if !(y1_std.is_finite() && y2_std.is_finite()) {
            return Err(input("targets must be finite"));
        }
        let net = model.net();
        net.forward_into(&model.network_input(x_std, None), mode(&mut rng), &mut self.marginal)?;
        net.forward_into(
            &model.network_input(x_std, Some(y1_std)),
            mode(&mut rng),
            &mut self.conditional,
        )?;
        let first = term(&self.marginal, y1_std, cfg)?;
        let second = term(&self.conditional, y2_std, cfg)?;
        let value = first.value + second.value;
        if let Some((grads, scale)) = grads {
            for (trace, t) in [(&self.marginal, first), (&self.conditional, second)] {
                let up = head_upstream(trace.output()[1], scale * t.d_mean, scale * t.d_variance);
                net.backward(trace, &up, grads)?;
            }
        }
        Ok(value)
    }
}

fn mode<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Mode<'a> {
    match rng {
        Some(r) => Mode::Train(&mut **r),
        None => Mode::Eval,
    }
}

fn term(trace: &ForwardTrace, y: f64, cfg: &LossConfig) -> Result<LossTerm> {
    let p: GaussianPrediction = trace.prediction();
    beta_nll(y, p.mean, p.variance, cfg)
}
