//! Binary decision trees shared by CART, the random forest and gradient
//! boosting. Nodes live in a flat vector with the root at index 0; a sample
//! goes left when `x[feature] <= threshold`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        /// Training samples that reached this node.
        cover: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Leaf { cover, .. } | Node::Split { cover, .. } => *cover,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 10,
            min_samples_leaf: 1,
            min_samples_split: 2,
        }
    }
}

/// Additive node statistics plus the impurity they imply.
pub trait Criterion {
    type Acc: Copy + Default;
    fn add(&self, acc: &mut Self::Acc, sample: usize);
    fn sub(&self, acc: &mut Self::Acc, sample: usize);
    /// Node impurity; lower is better and children are compared by sum.
    fn impurity(&self, acc: &Self::Acc) -> f64;
    fn leaf_value(&self, acc: &Self::Acc) -> f64;
    /// Whether a split that does not lower impurity may still be taken.
    /// CART does this (it is how XOR gets learned); boosting does not.
    fn allows_zero_gain(&self) -> bool {
        false
    }
}

/// Weighted Gini impurity for 0/1 targets; leaves hold the weighted
/// fraction of positives.
pub struct Gini<'a> {
    pub targets: &'a [f64],
    pub weights: &'a [f64],
}

impl Criterion for Gini<'_> {
    type Acc = (f64, f64);

    fn add(&self, acc: &mut (f64, f64), i: usize) {
        acc.0 += self.weights[i];
        acc.1 += self.weights[i] * self.targets[i];
    }

    fn sub(&self, acc: &mut (f64, f64), i: usize) {
        acc.0 -= self.weights[i];
        acc.1 -= self.weights[i] * self.targets[i];
    }

    fn impurity(&self, &(w, pos): &(f64, f64)) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let p = (pos / w).clamp(0.0, 1.0);
        w * 2.0 * p * (1.0 - p)
    }

    fn leaf_value(&self, &(w, pos): &(f64, f64)) -> f64 {
        if w <= 0.0 {
            0.5
        } else {
            (pos / w).clamp(0.0, 1.0)
        }
    }

    fn allows_zero_gain(&self) -> bool {
        true
    }
}

/// Second-order criterion on gradients/hessians: impurity `-G^2 / (H + l)`,
/// leaf value `-G / (H + l)`.
pub struct Newton<'a> {
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub lambda: f64,
}

impl Criterion for Newton<'_> {
    type Acc = (f64, f64);

    fn add(&self, acc: &mut (f64, f64), i: usize) {
        acc.0 += self.grad[i];
        acc.1 += self.hess[i];
    }

    fn sub(&self, acc: &mut (f64, f64), i: usize) {
        acc.0 -= self.grad[i];
        acc.1 -= self.hess[i];
    }

    fn impurity(&self, &(g, h): &(f64, f64)) -> f64 {
        -(g * g) / (h + self.lambda)
    }

    fn leaf_value(&self, &(g, h): &(f64, f64)) -> f64 {
        -g / (h + self.lambda)
    }
}

pub struct Builder<'a, C: Criterion> {
    pub x: &'a [Vec<f64>],
    pub criterion: C,
    pub config: &'a TreeConfig,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<C: Criterion> Builder<'_, C> {
    /// Grows a tree over `samples` (indices into `x`, repeats allowed for
    /// bootstrap bags). Also returns, per node, the samples that reached it
    /// when the node is a leaf.
    pub fn build(&self, samples: Vec<usize>, rng: &mut Rng) -> (Tree, Vec<Vec<usize>>) {
        let mut tree = Tree { nodes: Vec::new() };
        let mut members = Vec::new();
        self.grow(&mut tree, &mut members, samples, 0, rng);
        (tree, members)
    }

    fn grow(
        &self,
        tree: &mut Tree,
        members: &mut Vec<Vec<usize>>,
        samples: Vec<usize>,
        depth: usize,
        rng: &mut Rng,
    ) -> usize {
        let mut acc = C::Acc::default();
        for &i in &samples {
            self.criterion.add(&mut acc, i);
        }
        let id = tree.nodes.len();
        let cover = samples.len() as f64;
        tree.nodes.push(Node::Leaf {
            value: self.criterion.leaf_value(&acc),
            cover,
        });
        members.push(Vec::new());

        let splittable = depth < self.config.max_depth
            && samples.len() >= self.config.min_samples_split.max(2)
            && samples.len() >= 2 * self.config.min_samples_leaf.max(1);
        let best = if splittable {
            self.best_split(&samples, acc, rng)
        } else {
            None
        };
        let Some(best) = best else {
            members[id] = samples;
            return id;
        };
        let (left_s, right_s): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        let left = self.grow(tree, members, left_s, depth + 1, rng);
        let right = self.grow(tree, members, right_s, depth + 1, rng);
        tree.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            cover,
        };
        id
    }

    fn best_split(&self, samples: &[usize], parent: C::Acc, rng: &mut Rng) -> Option<Candidate> {
        let p = self.x[samples[0]].len();
        let mut features: Vec<usize> = (0..p).collect();
        if let Some(m) = self.max_features {
            if m < p {
                features.shuffle(rng);
                features.truncate(m.max(1));
                features.sort_unstable();
            }
        }
        let parent_impurity = self.criterion.impurity(&parent);
        let min_gain = if self.criterion.allows_zero_gain() {
            if parent_impurity <= 1e-12 {
                return None;
            }
            -1e-12
        } else {
            1e-12
        };
        let min_leaf = self.config.min_samples_leaf.max(1);
        let mut best: Option<Candidate> = None;
        let mut order = samples.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = C::Acc::default();
            let mut right = parent;
            for k in 0..order.len() - 1 {
                let i = order[k];
                self.criterion.add(&mut left, i);
                self.criterion.sub(&mut right, i);
                let (lo, hi) = (self.x[i][f], self.x[order[k + 1]][f]);
                if lo == hi || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                    continue;
                }
                let gain = parent_impurity
                    - self.criterion.impurity(&left)
                    - self.criterion.impurity(&right);
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn gini_splits_a_clean_threshold() {
        let x: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.0].iter().map(|&v| vec![v, 7.0]).collect();
        let y = [0.0, 0.0, 1.0, 1.0];
        let w = [1.0; 4];
        let b = Builder {
            x: &x,
            criterion: Gini {
                targets: &y,
                weights: &w,
            },
            config: &TreeConfig::default(),
            max_features: None,
        };
        let (t, _) = b.build((0..4).collect(), &mut rng::seeded(0));
        assert_eq!(t.depth(), 1);
        match &t.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
            }
            _ => panic!(),
        }
        assert_eq!(t.predict(&[0.5, 0.0]), 0.0);
        assert_eq!(t.predict(&[2.5, 0.0]), 1.0);
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = [1.0, 1.0];
        let w = [1.0, 1.0];
        let b = Builder {
            x: &x,
            criterion: Gini {
                targets: &y,
                weights: &w,
            },
            config: &TreeConfig::default(),
            max_features: None,
        };
        let (t, members) = b.build(vec![0, 1], &mut rng::seeded(0));
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(members[0], vec![0, 1]);
    }

    #[test]
    fn min_leaf_is_respected() {
        let x: Vec<Vec<f64>> = (0..10).map(|v| vec![v as f64]).collect();
        let y: Vec<f64> = (0..10).map(|v| if v == 0 { 1.0 } else { 0.0 }).collect();
        let w = vec![1.0; 10];
        let cfg = TreeConfig {
            min_samples_leaf: 3,
            ..Default::default()
        };
        let b = Builder {
            x: &x,
            criterion: Gini {
                targets: &y,
                weights: &w,
            },
            config: &cfg,
            max_features: None,
        };
        let (t, _) = b.build((0..10).collect(), &mut rng::seeded(0));
        for n in &t.nodes {
            if let Node::Leaf { cover, .. } = n {
                assert!(*cover >= 3.0);
            }
        }
    }
}
