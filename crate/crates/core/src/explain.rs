//! Shapley-value attribution.
//!
//! Tree models use the path-dependent TreeSHAP recursion. Each node's cover
//! is the number of background rows reaching it; where a node has no
//! background rows the training cover ratios are used below it. Forests are
//! explained in probability space (mean over trees), boosted trees in margin
//! space. Logistic regression uses the closed form `w_i (x_i - mean_i)` in
//! margin space.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{LearnerKind, ModelParams, Node, TrainedModel, Tree};
use crate::rng;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no exact explainer for `{0}`; use lr, dt, rf or gbt")]
    Unsupported(LearnerKind),
    #[error("interaction values need a tree model (dt, rf or gbt), got `{0}`")]
    InteractionUnsupported(LearnerKind),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
}

pub const DEFAULT_BACKGROUND_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionSpace {
    Probability,
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub patch_id: String,
    pub base_value: f64,
    pub contributions: Vec<f64>,
    pub model_output: f64,
    pub space: AttributionSpace,
}

impl ShapExplanation {
    /// `|base + sum(contributions) - output|`.
    pub fn additivity_gap(&self) -> f64 {
        (self.base_value + self.contributions.iter().sum::<f64>() - self.model_output).abs()
    }
}

/// Seeded subsample of at most `cap` rows, kept in original order.
pub fn background_sample(rows: &[Vec<f64>], cap: usize, seed: u64) -> Vec<Vec<f64>> {
    if rows.len() <= cap {
        return rows.to_vec();
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut rng::seeded(seed));
    idx.truncate(cap);
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

/// A tree plus, per node, the fraction of its parent's cover it receives.
#[derive(Debug, Clone)]
pub struct CoveredTree {
    pub tree: Tree,
    pub ratio: Vec<f64>,
}

impl CoveredTree {
    pub fn new(tree: &Tree, background: &[Vec<f64>]) -> Self {
        let mut counts = vec![0.0; tree.nodes.len()];
        for row in background {
            let mut i = 0;
            loop {
                counts[i] += 1.0;
                match &tree.nodes[i] {
                    Node::Leaf { .. } => break,
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        ..
                    } => {
                        i = if row[*feature] <= *threshold {
                            *left
                        } else {
                            *right
                        };
                    }
                }
            }
        }
        let mut ratio = vec![1.0; tree.nodes.len()];
        for node in &tree.nodes {
            if let Node::Split {
                left, right, cover, ..
            } = node
            {
                let parent_bg = counts[*left] + counts[*right];
                let (l, r) = if parent_bg > 0.0 {
                    (counts[*left] / parent_bg, counts[*right] / parent_bg)
                } else {
                    let (cl, cr) = (tree.nodes[*left].cover(), tree.nodes[*right].cover());
                    if cl + cr > 0.0 {
                        (cl / (cl + cr), cr / (cl + cr))
                    } else if *cover > 0.0 {
                        (cl / cover, cr / cover)
                    } else {
                        (0.5, 0.5)
                    }
                };
                ratio[*left] = l;
                ratio[*right] = r;
            }
        }
        CoveredTree {
            tree: tree.clone(),
            ratio,
        }
    }

    fn leaf_value(&self, i: usize) -> f64 {
        match &self.tree.nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Expected output when only the features flagged in `present` are known:
    /// known features follow `x`, unknown ones average children by cover.
    pub fn expectation(&self, x: &[f64], present: &[bool]) -> f64 {
        self.expect_from(0, x, present)
    }

    fn expect_from(&self, i: usize, x: &[f64], present: &[bool]) -> f64 {
        match &self.tree.nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if present[*feature] {
                    let next = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                    self.expect_from(next, x, present)
                } else {
                    let mut v = 0.0;
                    for c in [*left, *right] {
                        if self.ratio[c] > 0.0 {
                            v += self.ratio[c] * self.expect_from(c, x, present);
                        }
                    }
                    v
                }
            }
        }
    }

    /// Adds `scale` times this tree's Shapley values at `x` into `phi`.
    /// With `condition = Some((j, on))` the feature `j` is removed from the
    /// game and fixed to known (`on`) or unknown.
    fn shap_into(&self, x: &[f64], phi: &mut [f64], scale: f64, condition: Option<(usize, bool)>) {
        self.recurse(0, x, phi, scale, &[], 1.0, 1.0, None, condition, 1.0);
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &self,
        node: usize,
        x: &[f64],
        phi: &mut [f64],
        scale: f64,
        parent_path: &[PathElem],
        pz: f64,
        po: f64,
        pi: Option<usize>,
        condition: Option<(usize, bool)>,
        cond_frac: f64,
    ) {
        if cond_frac == 0.0 {
            return;
        }
        let mut path = parent_path.to_vec();
        // `pi` is the conditioned feature when arriving through its split;
        // that feature never enters the path.
        if condition.is_none_or(|(j, _)| pi != Some(j)) {
            extend(&mut path, pz, po, pi);
        }
        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..path.len() {
                    let w = unwound_path_sum(&path, i);
                    let el = &path[i];
                    phi[el.feature.expect("real feature")] +=
                        scale * w * (el.one - el.zero) * value * cond_frac;
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let d = *feature;
                let (hot, cold) = if x[d] <= *threshold {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                let (rh, rc) = (self.ratio[hot], self.ratio[cold]);
                if let Some((j, on)) = condition {
                    if j == d {
                        let via = Some(d);
                        if on {
                            self.recurse(
                                hot, x, phi, scale, &path, 1.0, 1.0, via, condition, cond_frac,
                            );
                        } else {
                            self.recurse(
                                hot,
                                x,
                                phi,
                                scale,
                                &path,
                                1.0,
                                1.0,
                                via,
                                condition,
                                cond_frac * rh,
                            );
                            self.recurse(
                                cold,
                                x,
                                phi,
                                scale,
                                &path,
                                1.0,
                                1.0,
                                via,
                                condition,
                                cond_frac * rc,
                            );
                        }
                        return;
                    }
                }
                let (mut iz, mut io) = (1.0, 1.0);
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(d)) {
                    iz = path[k].zero;
                    io = path[k].one;
                    unwind(&mut path, k);
                }
                // A branch with zero weight both with and without `d` known
                // contributes nothing, and would divide by zero when unwound.
                for (child, z, o) in [(hot, iz * rh, io), (cold, iz * rc, 0.0)] {
                    if z != 0.0 || o != 0.0 {
                        self.recurse(
                            child,
                            x,
                            phi,
                            scale,
                            &path,
                            z,
                            o,
                            Some(d),
                            condition,
                            cond_frac,
                        );
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, pz: f64, po: f64, pi: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature: pi,
        zero: pz,
        one: po,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lf = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += po * path[i].weight * (i + 1) as f64 / lf;
        path[i].weight = pz * path[i].weight * (l - i) as f64 / lf;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let lf = (l + 1) as f64;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut n = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = n * lf / ((j + 1) as f64 * one);
            n = t - path[j].weight * zero * (l - j) as f64 / lf;
        } else {
            path[j].weight = path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_path_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let lf = (l + 1) as f64;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut total = 0.0;
    if one != 0.0 {
        let mut n = path[l].weight;
        for j in (0..l).rev() {
            let t = n * lf / ((j + 1) as f64 * one);
            total += t;
            n = path[j].weight - t * zero * (l - j) as f64 / lf;
        }
    } else {
        for j in (0..l).rev() {
            total += path[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    total
}

/// Exact attributions for a decision tree, forest or boosted ensemble.
#[derive(Debug, Clone)]
pub struct TreeExplainer {
    pub trees: Vec<CoveredTree>,
    /// Weight applied to each tree's output (1/n for forests).
    pub tree_weight: f64,
    /// Constant added to the weighted tree sum (the boosted base margin).
    pub offset: f64,
    pub space: AttributionSpace,
    pub feature_count: usize,
}

impl TreeExplainer {
    pub fn new(model: &TrainedModel, background: &[Vec<f64>]) -> Result<Self, ExplainError> {
        if background.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        let cover = |ts: &[Tree]| {
            ts.iter()
                .map(|t| CoveredTree::new(t, background))
                .collect::<Vec<_>>()
        };
        let (trees, tree_weight, offset, space) = match &model.params {
            ModelParams::DecisionTree(t) => (
                cover(std::slice::from_ref(t)),
                1.0,
                0.0,
                AttributionSpace::Probability,
            ),
            ModelParams::RandomForest(f) => (
                cover(&f.trees),
                1.0 / f.trees.len() as f64,
                0.0,
                AttributionSpace::Probability,
            ),
            ModelParams::GradientBoostedTrees(b) => (
                cover(&b.trees),
                1.0,
                b.base_margin,
                AttributionSpace::Margin,
            ),
            _ => return Err(ExplainError::Unsupported(model.kind())),
        };
        Ok(TreeExplainer {
            trees,
            tree_weight,
            offset,
            space,
            feature_count: model.feature_count,
        })
    }

    /// Model output in the attribution space.
    pub fn output(&self, x: &[f64]) -> f64 {
        self.offset
            + self.tree_weight
                * self
                    .trees
                    .iter()
                    .map(|t| t.leaf_value(t.tree.leaf_index(x)))
                    .sum::<f64>()
    }

    /// Cover-weighted expectation given the known features; the value
    /// function whose Shapley values `explain` computes.
    pub fn expectation(&self, x: &[f64], present: &[bool]) -> f64 {
        self.offset
            + self.tree_weight
                * self
                    .trees
                    .iter()
                    .map(|t| t.expectation(x, present))
                    .sum::<f64>()
    }

    fn check(&self, x: &[f64]) -> Result<(), ExplainError> {
        if x.len() != self.feature_count {
            return Err(ExplainError::FeatureCount {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn explain(&self, x: &[f64]) -> Result<ShapExplanation, ExplainError> {
        self.check(x)?;
        let mut phi = vec![0.0; self.feature_count];
        for t in &self.trees {
            t.shap_into(x, &mut phi, self.tree_weight, None);
        }
        Ok(ShapExplanation {
            patch_id: String::new(),
            base_value: self.expectation(x, &vec![false; self.feature_count]),
            contributions: phi,
            model_output: self.output(x),
            space: self.space,
        })
    }

    /// Shapley interaction value between features `a` and `b` (a != b).
    pub fn interaction(&self, x: &[f64], a: usize, b: usize) -> Result<f64, ExplainError> {
        self.check(x)?;
        for f in [a, b] {
            if f >= self.feature_count {
                return Err(ExplainError::UnknownFeature(f.to_string()));
            }
        }
        let mut on = vec![0.0; self.feature_count];
        let mut off = vec![0.0; self.feature_count];
        for t in &self.trees {
            t.shap_into(x, &mut on, self.tree_weight, Some((b, true)));
            t.shap_into(x, &mut off, self.tree_weight, Some((b, false)));
        }
        Ok((on[a] - off[a]) / 2.0)
    }
}

/// Closed-form attribution for logistic regression in margin space.
pub fn linear_shap(
    model: &TrainedModel,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<ShapExplanation, ExplainError> {
    let ModelParams::Logistic(m) = &model.params else {
        return Err(ExplainError::Unsupported(model.kind()));
    };
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if x.len() != model.feature_count {
        return Err(ExplainError::FeatureCount {
            expected: model.feature_count,
            got: x.len(),
        });
    }
    let p = x.len();
    let mut mean = vec![0.0; p];
    for row in background {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for v in &mut mean {
        *v /= background.len() as f64;
    }
    let (w, intercept) = m.raw_coefficients();
    let contributions: Vec<f64> = (0..p).map(|i| w[i] * (x[i] - mean[i])).collect();
    let base_value = intercept + w.iter().zip(&mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(ShapExplanation {
        patch_id: String::new(),
        base_value,
        model_output: base_value + contributions.iter().sum::<f64>(),
        contributions,
        space: AttributionSpace::Margin,
    })
}

/// Picks the exact method for a model kind; NB and networks are refused.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Explainer {
    Tree(TreeExplainer),
    Linear {
        model: TrainedModel,
        background: Vec<Vec<f64>>,
    },
}

impl Explainer {
    pub fn new(model: &TrainedModel, background: &[Vec<f64>]) -> Result<Self, ExplainError> {
        match model.kind() {
            LearnerKind::DecisionTree
            | LearnerKind::RandomForest
            | LearnerKind::GradientBoostedTrees => {
                Ok(Explainer::Tree(TreeExplainer::new(model, background)?))
            }
            LearnerKind::LogisticRegression => {
                if background.is_empty() {
                    return Err(ExplainError::EmptyBackground);
                }
                Ok(Explainer::Linear {
                    model: model.clone(),
                    background: background.to_vec(),
                })
            }
            other => Err(ExplainError::Unsupported(other)),
        }
    }

    pub fn space(&self) -> AttributionSpace {
        match self {
            Explainer::Tree(t) => t.space,
            Explainer::Linear { .. } => AttributionSpace::Margin,
        }
    }

    pub fn explain(&self, x: &[f64]) -> Result<ShapExplanation, ExplainError> {
        match self {
            Explainer::Tree(t) => t.explain(x),
            Explainer::Linear { model, background } => linear_shap(model, x, background),
        }
    }

    /// Explains every row in parallel, tagging each with its patch id.
    pub fn explain_all(
        &self,
        ids: &[String],
        rows: &[Vec<f64>],
    ) -> Result<Vec<ShapExplanation>, ExplainError> {
        ids.par_iter()
            .zip(rows)
            .map(|(id, x)| {
                let mut e = self.explain(x)?;
                e.patch_id = id.clone();
                Ok(e)
            })
            .collect()
    }
}

pub fn interaction_pairs(
    model: &TrainedModel,
    x: &[f64],
    feature_a: usize,
    feature_b: usize,
    background: &[Vec<f64>],
) -> Result<f64, ExplainError> {
    if !model.kind().is_tree_ensemble() {
        return Err(ExplainError::InteractionUnsupported(model.kind()));
    }
    TreeExplainer::new(model, background)?.interaction(x, feature_a, feature_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub mean_abs_contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub space: AttributionSpace,
    pub instances: usize,
    pub ranked: Vec<RankedFeature>,
}

/// Mean |contribution| per feature, ranked descending (ties keep registry order).
pub fn global_importance(
    names: &[String],
    explanations: &[ShapExplanation],
    space: AttributionSpace,
) -> GlobalImportance {
    let n = explanations.len().max(1) as f64;
    let mut ranked: Vec<RankedFeature> = names
        .iter()
        .enumerate()
        .map(|(i, name)| RankedFeature {
            feature: name.clone(),
            mean_abs_contribution: explanations
                .iter()
                .map(|e| e.contributions[i].abs())
                .sum::<f64>()
                / n,
        })
        .collect();
    ranked.sort_by(|a, b| b.mean_abs_contribution.total_cmp(&a.mean_abs_contribution));
    GlobalImportance {
        space,
        instances: explanations.len(),
        ranked,
    }
}

/// Brute-force Shapley enumeration over all feature subsets; the reference
/// the fast algorithms are tested against. Exponential in `m`.
pub mod oracle {
    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    fn subset(mask: u32, m: usize) -> Vec<bool> {
        (0..m).map(|i| mask & (1 << i) != 0).collect()
    }

    pub fn shapley(m: usize, value: impl Fn(&[bool]) -> f64) -> Vec<f64> {
        let values: Vec<f64> = (0..1u32 << m).map(|s| value(&subset(s, m))).collect();
        (0..m)
            .map(|i| {
                let mut phi = 0.0;
                for s in 0..1u32 << m {
                    if s & (1 << i) != 0 {
                        continue;
                    }
                    let size = s.count_ones() as usize;
                    let w = factorial(size) * factorial(m - size - 1) / factorial(m);
                    phi += w * (values[(s | (1 << i)) as usize] - values[s as usize]);
                }
                phi
            })
            .collect()
    }

    pub fn interaction(m: usize, i: usize, j: usize, value: impl Fn(&[bool]) -> f64) -> f64 {
        let (bi, bj) = (1u32 << i, 1u32 << j);
        let v = |s: u32| value(&subset(s, m));
        let mut total = 0.0;
        for s in 0..1u32 << m {
            if s & (bi | bj) != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = factorial(size) * factorial(m - size - 2) / (2.0 * factorial(m - 1));
            total += w * (v(s | bi | bj) - v(s | bi) - v(s | bj) + v(s));
        }
        total
    }
}
