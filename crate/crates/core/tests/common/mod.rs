//! Shared test oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use zigzag_core::data::Standardizer;
use zigzag_core::losses::{LossConfig, PairLossWorkspace};
use zigzag_core::nn::{Gradients, Mode};
use zigzag_core::{FeedbackMode, FeedbackRegressor};

/// Random 1-feature pair model with two 64-wide hidden layers, plus a triplet.
pub struct GradCase {
    pub model: FeedbackRegressor,
    pub x: Vec<f64>,
    pub y1: f64,
    pub y2: f64,
    pub beta: f64,
}

pub fn grad_case(seed: u64, beta: f64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = FeedbackRegressor::init(&[64, 64], 0.0, FeedbackMode::DropWeights, Standardizer::identity(1), &mut rng)
        .unwrap();
    GradCase {
        model,
        x: vec![rng.random_range(-2.0..2.0)],
        y1: 1.5 * rng.sample::<f64, _>(StandardNormal),
        y2: 1.5 * rng.sample::<f64, _>(StandardNormal),
        beta,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdOutcome {
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Plain Gaussian NLL without the constant, written out independently.
fn nll(y: f64, mean: f64, var: f64) -> f64 {
    0.5 * var.ln() + 0.5 * (y - mean).powi(2) / var
}

/// Outputs and hidden sign pattern of both passes at the current parameters.
fn passes(model: &FeedbackRegressor, c: &GradCase) -> ([(f64, f64); 2], Vec<bool>) {
    let net = model.net();
    let mut pattern = Vec::new();
    let mut out = [(0.0, 0.0); 2];
    for (k, fb) in [None, Some(c.y1)].into_iter().enumerate() {
        let t = net.forward_traced(&model.network_input(&c.x, fb), Mode::Eval).unwrap();
        let p = t.prediction();
        out[k] = (p.mean, p.variance);
        pattern.extend(t.activation_pattern());
    }
    (out, pattern)
}

const FD_STEP: f64 = 1e-3;
/// Gradient entries below `max(REL_FLOOR, LOSS_FLOOR * |loss|)` are compared in
/// absolute terms; differencing a large loss cannot resolve smaller entries.
const REL_FLOOR: f64 = 1e-4;
const LOSS_FLOOR: f64 = 1e-6;

/// Finite differences of the beta-weighted pair loss, with the variance
/// weights frozen at the unperturbed parameters, against the analytic gradient.
pub fn fd_check(c: &GradCase) -> FdOutcome {
    let cfg = LossConfig::with_beta(c.beta).unwrap();
    let mut grads = Gradients::zeros_like(c.model.net());
    let mut ws = PairLossWorkspace::default();
    let loss = ws
        .evaluate(&c.model, &c.x, c.y1, c.y2, &cfg, None, Some((&mut grads, 1.0)))
        .unwrap();
    let floor = REL_FLOOR.max(LOSS_FLOOR * loss.abs());
    let analytic = grads.flatten();

    let (base, base_pattern) = passes(&c.model, c);
    let w = [base[0].1.powf(c.beta), base[1].1.powf(c.beta)];
    let objective = |out: &[(f64, f64); 2]| w[0] * nll(c.y1, out[0].0, out[0].1) + w[1] * nll(c.y2, out[1].0, out[1].1);

    let mut probe = c.model.clone();
    let theta = c.model.net().flat_params();
    let mut outcome = FdOutcome::default();
    let mut params = theta.clone();
    for i in 0..theta.len() {
        let mut eval = |v: f64| {
            params[i] = v;
            probe.net_mut().set_flat_params(&params).unwrap();
            passes(&probe, c)
        };
        // Richardson extrapolation of central differences at h and h/2.
        let mut central = |h: f64| {
            let (plus, pat_plus) = eval(theta[i] + h);
            let (minus, pat_minus) = eval(theta[i] - h);
            let same = pat_plus == base_pattern && pat_minus == base_pattern;
            ((objective(&plus) - objective(&minus)) / (2.0 * h), same)
        };
        let (d1, same1) = central(FD_STEP);
        let (d2, same2) = central(0.5 * FD_STEP);
        params[i] = theta[i];
        if !(same1 && same2) {
            outcome.skipped += 1;
            continue;
        }
        let numeric = (4.0 * d2 - d1) / 3.0;
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        outcome.checked += 1;
        outcome.max_rel_err = outcome.max_rel_err.max(rel);
    }
    outcome
}

/// Largest relative deviation between the beta gradient and `var^beta` times
/// the plain NLL gradient, term by term through the network.
pub fn stop_gradient_factorization_error(c: &GradCase) -> f64 {
    use zigzag_core::losses::{beta_nll, gaussian_nll};
    use zigzag_core::nn::head_upstream;
    let net = c.model.net();
    let cfg = LossConfig::with_beta(c.beta).unwrap();
    let mut worst = 0.0f64;
    for (fb, y) in [(None, c.y1), (Some(c.y1), c.y2)] {
        let t = net.forward_traced(&c.model.network_input(&c.x, fb), Mode::Eval).unwrap();
        let p = t.prediction();
        let raw_var = t.output()[1];
        let weighted = beta_nll(y, p.mean, p.variance, &cfg).unwrap();
        let plain = gaussian_nll(y, p.mean, p.variance, false).unwrap();
        let mut gb = Gradients::zeros_like(net);
        let mut gp = Gradients::zeros_like(net);
        net.backward(&t, &head_upstream(raw_var, weighted.d_mean, weighted.d_variance), &mut gb)
            .unwrap();
        net.backward(&t, &head_upstream(raw_var, plain.d_mean, plain.d_variance), &mut gp)
            .unwrap();
        let factor = p.variance.powf(c.beta);
        for (a, b) in gb.flatten().iter().zip(gp.flatten()) {
            let expected = factor * b;
            worst = worst.max((a - expected).abs() / expected.abs().max(1e-12));
        }
    }
    worst
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
