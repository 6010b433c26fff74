use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients};
use crate::error::{numeric, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state; accumulators mirror the parameter shape.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: AdamConfig,
    first: Gradients,
    second: Gradients,
    step: u64,
}

impl OptimizerState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one bias-corrected update to `net`.
    ///
    /// A non-finite gradient aborts the step and leaves both `net` and the
    /// optimizer state untouched.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.same_shape(net) || !self.first.same_shape(net) {
            return Err(shape("gradient shape does not match the network"));
        }
        if !grads.is_finite() {
            return Err(numeric(format!(
                "non-finite gradient at optimizer step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in net
            .params_mut()
            .zip(grads.iter())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    fn scalar_net(p: f64) -> DenseNet {
        let l = DenseLayer::from_parts(1, 1, vec![p], vec![0.0], Activation::Identity).unwrap();
        DenseNet::new(vec![l], 0.0).unwrap()
    }

    fn grad(net: &DenseNet, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(net);
        grads.weights[0][0] = g;
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&net, cfg);
        let g = grad(&net, 1.0);
        opt.step(&mut net, &g).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((net.layers()[0].weight(0, 0) - expected).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_or_rate_is_a_no_op() {
        let mut net = scalar_net(0.25);
        let mut opt = OptimizerState::new(&net, AdamConfig::default());
        let g = grad(&net, 0.0);
        opt.step(&mut net, &g).unwrap();
        assert_eq!(net.layers()[0].weight(0, 0), 0.25);

        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&net, cfg);
        let g = grad(&net, 3.0);
        opt.step(&mut net, &g).unwrap();
        assert_eq!(net.layers()[0].weight(0, 0), 0.25);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut net = scalar_net(1.0);
        let mut opt = OptimizerState::new(&net, AdamConfig::default());
        let g = grad(&net, f64::NAN);
        assert!(opt.step(&mut net, &g).is_err());
        assert_eq!(net.layers()[0].weight(0, 0), 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut net = scalar_net(3.0);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&net, cfg);
        for _ in 0..2000 {
            let p = net.layers()[0].weight(0, 0);
            let g = grad(&net, 2.0 * (p - 1.0));
            opt.step(&mut net, &g).unwrap();
        }
        assert!((net.layers()[0].weight(0, 0) - 1.0).abs() < 1e-3);
    }
}
