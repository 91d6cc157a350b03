//! Gradient-boosted regression trees on the logistic loss.
//!
//! Each round fits a tree to the per-sample gradient and hessian of the
//! current margins, with Newton leaf values `-G / (H + lambda)` shrunk by the
//! learning rate. A leaf whose step would raise the training loss of its own
//! samples is halved until it no longer does (or zeroed), so the training
//! loss is non-increasing round over round.

use serde::{Deserialize, Serialize};

use super::tree::{Builder, Newton, Node, Tree, TreeConfig};
use super::LearnError;
use crate::nn::{bce_with_logit, sigmoid};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        BoostingConfig {
            rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            lambda: 1.0,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub base_margin: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
    /// Weighted mean training loss after each round, starting with the base.
    pub train_loss: Vec<f64>,
}

impl BoostedTrees {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

fn weighted_loss(margins: &[f64], y: &[f64], w: &[f64], idx: impl Iterator<Item = usize>) -> f64 {
    idx.map(|i| w[i] * bce_with_logit(margins[i], y[i])).sum()
}

pub fn fit(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    config: &BoostingConfig,
) -> Result<BoostedTrees, LearnError> {
    let n = x.len();
    let total_w: f64 = weights.iter().sum();
    let pos: f64 = y.iter().zip(weights).map(|(t, w)| t * w).sum::<f64>() / total_w;
    let pos = pos.clamp(1e-6, 1.0 - 1e-6);
    let base_margin = (pos / (1.0 - pos)).ln();
    let mut margins = vec![base_margin; n];
    let mut train_loss = vec![weighted_loss(&margins, y, weights, 0..n) / total_w];
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        min_samples_split: 2,
    };
    let mut trees = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = weights[i] * (p - y[i]);
            hess[i] = weights[i] * p * (1.0 - p);
        }
        let builder = Builder {
            x,
            criterion: Newton {
                grad: &grad,
                hess: &hess,
                lambda: config.lambda,
            },
            config: &tree_cfg,
            max_features: None,
        };
        // Newton splits never sample features, so the rng is unused.
        let (mut tree, members) = builder.build((0..n).collect(), &mut rng::seeded(0));
        for (id, samples) in members.iter().enumerate() {
            let Node::Leaf { value, .. } = &mut tree.nodes[id] else {
                continue;
            };
            let mut step = *value * config.learning_rate;
            let before = weighted_loss(&margins, y, weights, samples.iter().copied());
            let mut halvings = 0;
            loop {
                let after: f64 = samples
                    .iter()
                    .map(|&i| weights[i] * bce_with_logit(margins[i] + step, y[i]))
                    .sum();
                if !after.is_finite() {
                    return Err(LearnError::NonFiniteLoss("gradient boosting"));
                }
                if after <= before {
                    break;
                }
                halvings += 1;
                step = if halvings > 40 { 0.0 } else { step * 0.5 };
            }
            *value = step;
        }
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(&x[i]);
        }
        let loss = weighted_loss(&margins, y, weights, 0..n) / total_w;
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss("gradient boosting"));
        }
        train_loss.push(loss);
        trees.push(tree);
    }
    Ok(BoostedTrees {
        base_margin,
        trees,
        train_loss,
    })
}
