//! L2-regularized logistic regression fitted by full-batch gradient descent
//! with a backtracking line search, on standardized features.

use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::nn::{bce_with_logit, sigmoid, Scaler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub initial_step: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 0.01,
            max_epochs: 2000,
            tolerance: 1e-6,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub scaler: Scaler,
    /// Weights over standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs_run: usize,
}

impl LogisticModel {
    pub fn zeros(p: usize) -> Self {
        LogisticModel {
            scaler: Scaler::identity(p),
            weights: vec![0.0; p],
            bias: 0.0,
            epochs_run: 0,
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        let z = self.scaler.transform(x);
        self.bias + self.weights.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    /// Weights and intercept on the raw feature scale:
    /// `margin(x) = intercept + sum_i w_i x_i`.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let w: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.scaler.scale)
            .map(|(w, s)| w / s)
            .collect();
        let intercept = self.bias
            - w.iter()
                .zip(&self.scaler.mean)
                .map(|(w, m)| w * m)
                .sum::<f64>();
        (w, intercept)
    }
}

/// Weighted mean cross-entropy plus `l2/2 * |w|^2` and its gradient, for
/// parameters laid out as `[w_0, .., w_{p-1}, bias]`. `x` is used as given.
pub fn loss_and_grad(
    params: &[f64],
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let p = params.len() - 1;
    let (w, b) = (&params[..p], params[p]);
    let total_w: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p + 1];
    for ((row, &t), &sw) in x.iter().zip(y).zip(weights) {
        let z = b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
        loss += sw * bce_with_logit(z, t);
        let d = sw * (sigmoid(z) - t);
        for (g, v) in grad[..p].iter_mut().zip(row) {
            *g += d * v;
        }
        grad[p] += d;
    }
    loss /= total_w;
    for g in &mut grad {
        *g /= total_w;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad[..p].iter_mut().zip(w) {
        *g += l2 * v;
    }
    (loss, grad)
}

pub fn fit(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    config: &LogisticConfig,
) -> Result<LogisticModel, LearnError> {
    let scaler = Scaler::fit(x);
    let xs: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
    let p = scaler.mean.len();
    let mut params = vec![0.0; p + 1];
    let (mut loss, mut grad) = loss_and_grad(&params, &xs, y, weights, config.l2);
    let mut step = config.initial_step;
    let mut epochs_run = 0;
    for _ in 0..config.max_epochs {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < config.tolerance {
            break;
        }
        epochs_run += 1;
        // Armijo backtracking; grow the step again after each success.
        loop {
            let cand: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - step * g)
                .collect();
            let (cl, cg) = loss_and_grad(&cand, &xs, y, weights, config.l2);
            if !cl.is_finite() {
                return Err(LearnError::NonFiniteLoss("logistic regression"));
            }
            if cl <= loss - 0.5 * step * gnorm2 || step < 1e-12 {
                params = cand;
                loss = cl;
                grad = cg;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
    }
    let bias = params.pop().expect("bias");
    Ok(LogisticModel {
        scaler,
        weights: params,
        bias,
        epochs_run,
    })
}
