//! CART classification trees and bagged random forests.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Builder, Gini, Tree, TreeConfig};
use crate::rng;

/// Single CART tree on Gini impurity; leaves hold positive-class frequency.
pub fn fit_cart(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    config: &TreeConfig,
    seed: u64,
) -> Tree {
    let builder = Builder {
        x,
        criterion: Gini {
            targets: y,
            weights,
        },
        config,
        max_features: None,
    };
    builder
        .build((0..x.len()).collect(), &mut rng::seeded(seed))
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means ceil(sqrt(p)).
    pub max_features: Option<usize>,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_features: None,
            tree: TreeConfig {
                max_depth: 32,
                min_samples_leaf: 1,
                min_samples_split: 2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean of per-tree leaf probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Trees are grown in parallel, each from its own derived seed, so the
/// result does not depend on the number of worker threads.
pub fn fit(x: &[Vec<f64>], y: &[f64], weights: &[f64], config: &ForestConfig, seed: u64) -> Forest {
    let n = x.len();
    let p = x[0].len();
    let m = config
        .max_features
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p);
    let trees = (0..config.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut r = rng::seeded(rng::derive(seed, t as u64));
            let bag: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
            let builder = Builder {
                x,
                criterion: Gini {
                    targets: y,
                    weights,
                },
                config: &config.tree,
                max_features: Some(m),
            };
            builder.build(bag, &mut r).0
        })
        .collect();
    Forest { trees }
}
