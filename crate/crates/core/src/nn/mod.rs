//! Dense feed-forward networks with a Gaussian (mean, variance) head.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. All numerics
//! are `f64`. The network is differentiated by hand: [`DenseNet::forward_traced`]
//! records pre-activations and dropout masks, and [`DenseNet::backward`]
//! accumulates exact parameter gradients for that recorded computation.

mod adam;
mod checkpoint;

pub use adam::{AdamConfig, OptimizerState};
pub use checkpoint::{Architecture, Checkpoint, LayerSpec, TrainingMetadata};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{input, numeric, shape, Error, Result};

/// Lower bound added to every predicted variance after the softplus.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for strictly positive arguments.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse requires y > 0");
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// A Gaussian predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPrediction {
    /// Maps the raw network outputs `(mean, raw_variance)` through the variance head.
    pub fn from_raw(mean: f64, raw_variance: f64) -> Self {
        Self {
            mean,
            variance: softplus(raw_variance) + VARIANCE_FLOOR,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(shape("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(shape(format!(
                "weight buffer has {} entries, expected {}x{}",
                weights.len(),
                out_dim,
                in_dim
            )));
        }
        if bias.len() != out_dim {
            return Err(shape(format!(
                "bias has {} entries, expected {}",
                bias.len(),
                out_dim
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(numeric("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// All-zero layer.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::from_parts(
            in_dim,
            out_dim,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    pub fn set_weight(&mut self, row: usize, col: usize, value: f64) {
        self.weights[row * self.in_dim + col] = value;
    }

    pub fn set_bias(&mut self, row: usize, value: f64) {
        self.bias[row] = value;
    }

    /// Sets every weight in input column `col` to `value`.
    pub fn fill_column(&mut self, col: usize, value: f64) {
        for row in 0..self.out_dim {
            self.weights[row * self.in_dim + col] = value;
        }
    }

    fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(input).fold(*b, |acc, (w, x)| acc + w * x)),
        );
    }
}

/// Selects evaluation (no dropout) or training (dropout drawn from the given generator).
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Intermediate values of one forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// `inputs[k]` is the vector fed to layer `k`.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout scale per hidden unit, when dropout was active.
    masks: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Sign pattern of all hidden pre-activations; used to detect ReLU kink crossings.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre
            .iter()
            .take(self.pre.len().saturating_sub(1))
            .flat_map(|p| p.iter().map(|v| *v > 0.0))
            .collect()
    }

    /// The Gaussian prediction encoded by the first two outputs.
    pub fn prediction(&self) -> GaussianPrediction {
        GaussianPrediction::from_raw(self.output[0], self.output[1])
    }
}

/// Gradient buffers with the same shape as a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn layer_weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    pub fn layer_bias(&self, k: usize) -> &[f64] {
        &self.bias[k]
    }

    pub fn reset(&mut self) {
        self.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    /// Flattened in the same order as [`DenseNet::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.bias.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub(crate) fn same_shape(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && net
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.bias))
                .all(|(l, (w, b))| w.len() == l.weights.len() && b.len() == l.bias.len())
    }
}

/// A dense feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    dropout_rate: f64,
}

impl DenseNet {
    pub fn new(layers: Vec<DenseLayer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(shape(format!(
                    "layer output width {} does not match next input width {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(input(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    /// He-uniform initialised network with ReLU hidden layers and a linear output.
    ///
    /// `widths` lists every layer width including input and output, e.g. `[2, 64, 64, 2]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], dropout_rate: f64, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(shape("need at least input and output widths"));
        }
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (k, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let activation = if k + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            let limit = (6.0 / fan_in.max(1) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            layers.push(DenseLayer::from_parts(
                fan_in,
                fan_out,
                weights,
                vec![0.0; fan_out],
                activation,
            )?);
        }
        Self::new(layers, dropout_rate)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Layer widths including the input width.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Runs the network and maps the two outputs through the Gaussian head.
    pub fn forward(&self, input: &[f64], mode: Mode<'_>) -> Result<GaussianPrediction> {
        if self.output_width() != 2 {
            return Err(shape(format!(
                "Gaussian head needs 2 outputs, network has {}",
                self.output_width()
            )));
        }
        let raw = self.forward_raw(input, mode)?;
        Ok(GaussianPrediction::from_raw(raw[0], raw[1]))
    }

    /// Runs the network and returns the raw output vector.
    pub fn forward_raw(&self, input: &[f64], mode: Mode<'_>) -> Result<Vec<f64>> {
        let mut trace = ForwardTrace::default();
        self.forward_into(input, mode, &mut trace)?;
        Ok(trace.output)
    }

    /// Forward pass that keeps everything [`DenseNet::backward`] needs.
    pub fn forward_traced(&self, input: &[f64], mode: Mode<'_>) -> Result<ForwardTrace> {
        let mut trace = ForwardTrace::default();
        self.forward_into(input, mode, &mut trace)?;
        Ok(trace)
    }

    /// Like [`DenseNet::forward_traced`] but reuses the buffers of `trace`.
    pub fn forward_into(
        &self,
        input: &[f64],
        mut mode: Mode<'_>,
        trace: &mut ForwardTrace,
    ) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_width()
            )));
        }
        let n = self.layers.len();
        trace.inputs.resize_with(n, Vec::new);
        trace.pre.resize_with(n, Vec::new);
        trace.masks.resize_with(n, || None);
        trace.inputs[0].clear();
        trace.inputs[0].extend_from_slice(input);

        let dropout = self.dropout_rate;
        for (k, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.inputs.split_at_mut(k + 1);
            let x = &head[k];
            let pre = &mut trace.pre[k];
            layer.affine_into(x, pre);
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(numeric(format!("non-finite pre-activation in layer {k}")));
            }
            let out: &mut Vec<f64> = if k + 1 < n { &mut tail[0] } else { &mut trace.output };
            out.clear();
            out.extend(pre.iter().map(|v| layer.activation.apply(*v)));

            trace.masks[k] = None;
            if k + 1 < n && dropout > 0.0 {
                if let Mode::Train(rng) = &mut mode {
                    let keep = 1.0 - dropout;
                    let scale = 1.0 / keep;
                    let mask: Vec<f64> = (0..out.len())
                        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                        .collect();
                    out.iter_mut().zip(&mask).for_each(|(o, m)| *o *= m);
                    trace.masks[k] = Some(mask);
                }
            }
        }
        Ok(())
    }

    /// Accumulates into `grads` the gradient of `upstream · output` with respect to
    /// every parameter, for the computation recorded in `trace`.
    ///
    /// `upstream` is the gradient of the loss with respect to the raw outputs
    /// (for a Gaussian head: mean and raw-variance channels).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if trace.is_empty() {
            return Err(Error::State(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if trace.inputs.len() != self.layers.len() || trace.output.len() != self.output_width() {
            return Err(Error::State(
                "forward trace was recorded on a different network".into(),
            ));
        }
        if upstream.len() != self.output_width() {
            return Err(shape(format!(
                "upstream gradient has length {}, network has {} outputs",
                upstream.len(),
                self.output_width()
            )));
        }
        if !grads.same_shape(self) {
            return Err(shape("gradient buffers do not match the network"));
        }

        let mut delta: Vec<f64> = upstream.to_vec();
        let mut next = Vec::new();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if let Some(mask) = &trace.masks[k] {
                delta.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            for (d, p) in delta.iter_mut().zip(&trace.pre[k]) {
                *d *= layer.activation.derivative(*p);
            }
            let x = &trace.inputs[k];
            let gw = &mut grads.weights[k];
            for (row, d) in gw.chunks_exact_mut(layer.in_dim).zip(&delta) {
                if *d != 0.0 {
                    row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
                }
            }
            grads.bias[k].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);

            if k > 0 {
                next.clear();
                next.resize(layer.in_dim, 0.0);
                for (row, d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    if *d != 0.0 {
                        next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
                    }
                }
                std::mem::swap(&mut delta, &mut next);
            }
        }
        Ok(())
    }
}

/// Chains a loss gradient on `(mean, variance)` back to the raw `(mean, raw_variance)` outputs.
pub fn head_upstream(raw_variance: f64, d_mean: f64, d_variance: f64) -> [f64; 2] {
    [d_mean, d_variance * sigmoid(raw_variance)]
}
