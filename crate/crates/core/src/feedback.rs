//! The pairwise regressor.
//!
//! A [`DenseNet`] receives the standardized input concatenated with one
//! feedback slot. Feeding a candidate first answer `y1` into the slot yields
//! `p(y2 | y1, x)`; leaving the slot out yields the marginal `p(y | x)`.
//!
//! In [`FeedbackMode::DropWeights`] the marginal is the network with every
//! first-layer weight attached to the feedback slot set to zero. Rather than
//! zeroing and restoring those weights, the marginal pass feeds `0.0` into the
//! slot: each dropped product `w * y` and each `w * 0.0` contributes a signed
//! zero to the same accumulation, so the result is bit-identical while the
//! parameters are never written. Marginal prediction therefore only needs
//! shared access and is safe to call concurrently.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{input, shape, Result};
use crate::nn::{Checkpoint, DenseNet, GaussianPrediction, Mode, TrainingMetadata, VARIANCE_FLOOR};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Marginal pass ignores the feedback slot entirely.
    #[default]
    DropWeights,
    /// Marginal pass feeds a fixed, uninformative answer `y0` (raw units).
    ConstantY0 { y0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRegressor {
    net: DenseNet,
    mode: FeedbackMode,
    scaler: Standardizer,
    feature_names: Vec<String>,
}

impl FeedbackRegressor {
    pub fn new(net: DenseNet, mode: FeedbackMode, scaler: Standardizer) -> Result<Self> {
        scaler.validate()?;
        let dim = scaler.input_dim();
        if net.input_width() != dim + 1 {
            return Err(shape(format!(
                "network input width {} must equal feature count {dim} + 1 feedback slot",
                net.input_width()
            )));
        }
        if net.output_width() != 2 {
            return Err(shape("network must emit (mean, raw variance)"));
        }
        if let FeedbackMode::ConstantY0 { y0 } = mode {
            if !y0.is_finite() {
                return Err(input("y0 must be finite"));
            }
        }
        let feature_names = (0..dim).map(|j| format!("x{j}")).collect();
        Ok(Self {
            net,
            mode,
            scaler,
            feature_names,
        })
    }

    /// Randomly initialised model with the given hidden widths.
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        dropout_rate: f64,
        mode: FeedbackMode,
        scaler: Standardizer,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![scaler.input_dim() + 1];
        widths.extend_from_slice(hidden);
        widths.push(2);
        let net = DenseNet::init(&widths, dropout_rate, rng)?;
        Self::new(net, mode, scaler)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.input_dim() {
            return Err(shape("feature name count does not match the input width"));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn scaler(&self) -> &Standardizer {
        &self.scaler
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn input_dim(&self) -> usize {
        self.scaler.input_dim()
    }

    /// Column of the first layer that receives the feedback value.
    pub fn feedback_column(&self) -> usize {
        self.input_dim()
    }

    /// Network input for already standardized values.
    ///
    /// `feedback = None` builds the marginal input for the current mode.
    pub fn network_input(&self, x_std: &[f64], feedback: Option<f64>) -> Vec<f64> {
        let slot = match (feedback, self.mode) {
            (Some(y), _) => y,
            (None, FeedbackMode::DropWeights) => 0.0,
            (None, FeedbackMode::ConstantY0 { y0 }) => self.scaler.y(y0),
        };
        let mut v = Vec::with_capacity(x_std.len() + 1);
        v.extend_from_slice(x_std);
        v.push(slot);
        v
    }

    fn standardized_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.scaler.x(x))
    }

    fn to_raw(&self, p: GaussianPrediction) -> GaussianPrediction {
        GaussianPrediction {
            mean: self.scaler.y_inverse(p.mean),
            variance: self.scaler.variance_inverse(p.variance).max(VARIANCE_FLOOR),
        }
    }

    /// `p(y | x)` in raw output units.
    pub fn predict_marginal(&self, x: &[f64]) -> Result<GaussianPrediction> {
        let z = self.standardized_x(x)?;
        let p = self.net.forward(&self.network_input(&z, None), Mode::Eval)?;
        Ok(self.to_raw(p))
    }

    /// `p(y2 | y1, x)` in raw output units.
    pub fn predict_conditional(&self, x: &[f64], y1: f64) -> Result<GaussianPrediction> {
        if !y1.is_finite() {
            return Err(input("feedback value must be finite"));
        }
        let z = self.standardized_x(x)?;
        let p = self
            .net
            .forward(&self.network_input(&z, Some(self.scaler.y(y1))), Mode::Eval)?;
        Ok(self.to_raw(p))
    }

    /// Conditionals for several feedback values at one input.
    pub fn predict_conditional_batch(&self, x: &[f64], ys: &[f64]) -> Result<Vec<GaussianPrediction>> {
        let z = self.standardized_x(x)?;
        let mut input_buf = self.network_input(&z, Some(0.0));
        let slot = self.feedback_column();
        ys.iter()
            .map(|&y| {
                if !y.is_finite() {
                    return Err(input("feedback value must be finite"));
                }
                input_buf[slot] = self.scaler.y(y);
                Ok(self.to_raw(self.net.forward(&input_buf, Mode::Eval)?))
            })
            .collect()
    }

    /// `m` independent draws from the marginal predictive distribution.
    pub fn sample_marginal(&self, x: &[f64], m: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        if m == 0 {
            return Err(input("sample count must be at least 1"));
        }
        let p = self.predict_marginal(x)?;
        let sd = p.std_dev();
        Ok((0..m)
            .map(|_| p.mean + sd * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    pub fn to_bundle(&self, seed: Option<u64>, training: Option<TrainingMetadata>) -> ModelBundle {
        ModelBundle {
            checkpoint: Checkpoint::from_net(&self.net, seed, training),
            scaler: self.scaler.clone(),
            feedback_mode: self.mode,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        Self::new(bundle.checkpoint.to_net()?, bundle.feedback_mode, bundle.scaler.clone())?
            .with_feature_names(bundle.feature_names.clone())
    }
}

/// Everything needed to rebuild a [`FeedbackRegressor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub checkpoint: Checkpoint,
    pub scaler: Standardizer,
    pub feedback_mode: FeedbackMode,
    pub feature_names: Vec<String>,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}

/// Hand-built single-layer model used throughout the tests and the acceptance suite:
/// marginal mean `offset`, conditional mean `rho * y1 + (1 - rho) * offset`,
/// unit variance everywhere, identity scaling.
///
/// With `offset != 0` the marginal needs the constant-y0 mode (`y0 = offset`)
/// for the conditional to average back to the marginal.
pub fn linear_feedback_model(input_dim: usize, rho: f64, offset: f64, mode: FeedbackMode) -> Result<FeedbackRegressor> {
    use crate::nn::{softplus_inverse, Activation, DenseLayer};
    let in_w = input_dim + 1;
    let mut layer = DenseLayer::zeros(in_w, 2, Activation::Identity)?;
    layer.set_weight(0, input_dim, rho);
    layer.set_bias(0, (1.0 - rho) * offset);
    layer.set_bias(1, softplus_inverse(1.0 - VARIANCE_FLOOR));
    let net = DenseNet::new(vec![layer], 0.0)?;
    FeedbackRegressor::new(net, mode, Standardizer::identity(input_dim))
}
