//! Feed-forward network: ReLU hidden layers and a sigmoid output, trained on
//! weighted cross-entropy with mini-batch Adam over standardized inputs.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::nn::{bce_with_logit, sigmoid, Adam, Scaler, Stack};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![64],
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    pub scaler: Scaler,
    pub stack: Stack,
}

impl FeedForwardNet {
    pub fn new(inputs: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        FeedForwardNet {
            scaler: Scaler::identity(inputs),
            stack: Stack::new(&sizes, false, &mut rng::seeded(seed)),
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.stack.forward(&self.scaler.transform(x))[0]
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Weighted mean cross-entropy over the given rows (already scaled) and
    /// its gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, x: &[&[f64]], y: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.stack.param_count()];
        let total: f64 = w.iter().sum();
        let mut loss = 0.0;
        for ((row, &t), &sw) in x.iter().zip(y).zip(w) {
            let trace = self.stack.trace(row);
            let z = trace.output[0];
            loss += sw * bce_with_logit(z, t);
            self.stack
                .backward(&trace, &[sw * (sigmoid(z) - t) / total], &mut grad);
        }
        (loss / total, grad)
    }
}

pub fn fit(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    config: &NetConfig,
    seed: u64,
) -> Result<FeedForwardNet, LearnError> {
    let mut net = FeedForwardNet::new(x[0].len(), &config.hidden, rng::derive(seed, 0));
    net.scaler = Scaler::fit(x);
    let xs: Vec<Vec<f64>> = x.iter().map(|r| net.scaler.transform(r)).collect();
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut shuffle = rng::seeded(rng::derive(seed, 1));
    let mut adam = Adam::new(net.stack.param_count(), config.learning_rate);
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let bw: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
            if bw.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let (loss, grad) = net.loss_and_grad(&bx, &by, &bw);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::NonFiniteLoss("feed-forward network"));
            }
            adam.step(net.stack.params_mut(), &grad);
        }
    }
    if net.stack.params().iter().any(|p| !p.is_finite()) {
        return Err(LearnError::NonFiniteLoss("feed-forward network"));
    }
    Ok(net)
}
