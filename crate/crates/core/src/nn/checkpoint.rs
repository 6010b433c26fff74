use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, DenseNet};
use crate::error::{shape, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub output_width: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParameters {
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub optimizer_steps: u64,
    pub final_loss: f64,
}

/// Serialized form of a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub parameters: Vec<LayerParameters>,
    pub dropout_rate: f64,
    pub seed: Option<u64>,
    pub training: Option<TrainingMetadata>,
}

impl Checkpoint {
    pub fn from_net(net: &DenseNet, seed: Option<u64>, training: Option<TrainingMetadata>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerSpec {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
            })
            .collect();
        let parameters = net
            .layers()
            .iter()
            .map(|l| LayerParameters {
                weights: l.weights().to_vec(),
                bias: l.bias().to_vec(),
            })
            .collect();
        Self {
            architecture: Architecture {
                input_width: net.input_width(),
                output_width: net.output_width(),
                layers,
            },
            parameters,
            dropout_rate: net.dropout_rate(),
            seed,
            training,
        }
    }

    pub fn to_net(&self) -> Result<DenseNet> {
        if self.architecture.layers.len() != self.parameters.len() {
            return Err(shape("architecture and parameter lists differ in length"));
        }
        let layers = self
            .architecture
            .layers
            .iter()
            .zip(&self.parameters)
            .map(|(spec, p)| {
                DenseLayer::from_parts(
                    spec.in_dim,
                    spec.out_dim,
                    p.weights.clone(),
                    p.bias.clone(),
                    spec.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let net = DenseNet::new(layers, self.dropout_rate)?;
        if net.input_width() != self.architecture.input_width
            || net.output_width() != self.architecture.output_width
        {
            return Err(shape("declared input/output widths do not match the layers"));
        }
        Ok(net)
    }
}
