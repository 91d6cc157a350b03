//! Combining the learned (crossed) and engineered feature sets.
//!
//! * `ensemble`: one model per feature set, probabilities averaged.
//! * `concat`: one model over `[learned | engineered]`.
//! * `fusion`: a two-tower network. Each tower has one ReLU hidden layer on
//!   its own feature set; the tower outputs are concatenated and passed
//!   through a joint ReLU layer into a sigmoid output.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, CrossvalOutcome, CrossvalSpec};
use crate::featureio::FeatureTable;
use crate::learn::{self, FeatureRow, LearnConfig, LearnError, LearnerKind, TrainedModel};
use crate::nn::{bce_with_logit, sigmoid, Adam, Scaler, Stack};
use crate::rng;

#[derive(Debug, Error)]
pub enum CombineError {
    #[error("patch `{patch_id}` has no {side} features")]
    MissingSide {
        patch_id: String,
        side: &'static str,
    },
    #[error("{side} member expects {expected} features, got {got}")]
    FeatureLength {
        side: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("row {row}: learned and engineered rows disagree on {what}")]
    RowMismatch { row: usize, what: &'static str },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("cannot read combined model: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Ensemble,
    Concat,
    Fusion,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ensemble => "ensemble",
            Strategy::Concat => "concat",
            Strategy::Fusion => "fusion",
        }
    }
}

/// Mean of two member probabilities.
pub fn average(p_learned: f64, p_engineered: f64) -> f64 {
    (p_learned + p_engineered) / 2.0
}

pub fn ensemble_average(
    learned: &TrainedModel,
    engineered: &TrainedModel,
    x_learned: &[f64],
    x_engineered: &[f64],
) -> Result<f64, CombineError> {
    let member = |m: &TrainedModel, x: &[f64], side| {
        if x.len() != m.feature_count {
            return Err(CombineError::FeatureLength {
                side,
                expected: m.feature_count,
                got: x.len(),
            });
        }
        Ok(m.predict_proba(x)?)
    };
    Ok(average(
        member(learned, x_learned, "learned")?,
        member(engineered, x_engineered, "engineered")?,
    ))
}

pub fn naive_concat(learned: &[f64], engineered: &[f64]) -> Vec<f64> {
    learned.iter().chain(engineered).copied().collect()
}

/// Joins two tables on patch id, keeping the learned table's row order and
/// both sets of feature names.
pub fn concat_tables(
    learned: &FeatureTable,
    engineered: &FeatureTable,
) -> Result<FeatureTable, CombineError> {
    let index: std::collections::BTreeMap<&str, &FeatureRow> = engineered
        .rows
        .iter()
        .map(|r| (r.patch_id.as_str(), r))
        .collect();
    let mut rows = Vec::with_capacity(learned.rows.len());
    for r in &learned.rows {
        let e = index
            .get(r.patch_id.as_str())
            .ok_or_else(|| CombineError::MissingSide {
                patch_id: r.patch_id.clone(),
                side: "engineered",
            })?;
        rows.push(FeatureRow {
            patch_id: r.patch_id.clone(),
            bug_id: r.bug_id.clone(),
            features: naive_concat(&r.features, &e.features),
            label: r.label,
        });
    }
    if let Some(e) = engineered
        .rows
        .iter()
        .find(|e| !learned.rows.iter().any(|r| r.patch_id == e.patch_id))
    {
        return Err(CombineError::MissingSide {
            patch_id: e.patch_id.clone(),
            side: "learned",
        });
    }
    Ok(FeatureTable {
        names: learned
            .names
            .iter()
            .chain(&engineered.names)
            .cloned()
            .collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub learned_width: usize,
    pub engineered_width: usize,
    pub joint_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            learned_width: 32,
            engineered_width: 16,
            joint_width: 16,
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepFusion {
    pub learned_scaler: Scaler,
    pub engineered_scaler: Scaler,
    pub learned_tower: Stack,
    pub engineered_tower: Stack,
    pub head: Stack,
}

impl DeepFusion {
    pub fn new(
        learned_len: usize,
        engineered_len: usize,
        config: &FusionConfig,
        seed: u64,
    ) -> Self {
        let mut r = rng::seeded(seed);
        let learned_tower = Stack::new(&[learned_len, config.learned_width], true, &mut r);
        let engineered_tower = Stack::new(&[engineered_len, config.engineered_width], true, &mut r);
        let head = Stack::new(
            &[
                config.learned_width + config.engineered_width,
                config.joint_width,
                1,
            ],
            false,
            &mut r,
        );
        DeepFusion {
            learned_scaler: Scaler::identity(learned_len),
            engineered_scaler: Scaler::identity(engineered_len),
            learned_tower,
            engineered_tower,
            head,
        }
    }

    pub fn input_widths(&self) -> (usize, usize) {
        (
            self.learned_scaler.mean.len(),
            self.engineered_scaler.mean.len(),
        )
    }

    fn logit_scaled(&self, xl: &[f64], xe: &[f64]) -> f64 {
        let joint = naive_concat(
            &self.learned_tower.forward(xl),
            &self.engineered_tower.forward(xe),
        );
        self.head.forward(&joint)[0]
    }

    pub fn logit(&self, xl: &[f64], xe: &[f64]) -> f64 {
        self.logit_scaled(
            &self.learned_scaler.transform(xl),
            &self.engineered_scaler.transform(xe),
        )
    }

    pub fn predict_proba(&self, xl: &[f64], xe: &[f64]) -> Result<f64, CombineError> {
        let (pl, pe) = self.input_widths();
        if xl.len() != pl {
            return Err(CombineError::FeatureLength {
                side: "learned",
                expected: pl,
                got: xl.len(),
            });
        }
        if xe.len() != pe {
            return Err(CombineError::FeatureLength {
                side: "engineered",
                expected: pe,
                got: xe.len(),
            });
        }
        Ok(sigmoid(self.logit(xl, xe)))
    }

    pub fn param_count(&self) -> usize {
        self.learned_tower.param_count()
            + self.engineered_tower.param_count()
            + self.head.param_count()
    }

    /// Flat parameters: learned tower, engineered tower, head.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.learned_tower.params();
        p.extend(self.engineered_tower.params());
        p.extend(self.head.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let a = self.learned_tower.param_count();
        let b = a + self.engineered_tower.param_count();
        self.learned_tower.set_params(&p[..a]);
        self.engineered_tower.set_params(&p[a..b]);
        self.head.set_params(&p[b..]);
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.learned_tower
            .params_mut()
            .chain(self.engineered_tower.params_mut())
            .chain(self.head.params_mut())
    }

    /// Weighted mean cross-entropy over already-scaled rows and its gradient
    /// in `params` order.
    pub fn loss_and_grad(
        &self,
        xl: &[&[f64]],
        xe: &[&[f64]],
        y: &[f64],
        w: &[f64],
    ) -> (f64, Vec<f64>) {
        let a = self.learned_tower.param_count();
        let b = a + self.engineered_tower.param_count();
        let mut grad = vec![0.0; self.param_count()];
        let total: f64 = w.iter().sum();
        let split = self.learned_tower.layers.last().map_or(0, |l| l.outputs);
        let mut loss = 0.0;
        for i in 0..y.len() {
            let tl = self.learned_tower.trace(xl[i]);
            let te = self.engineered_tower.trace(xe[i]);
            let joint = naive_concat(&tl.output, &te.output);
            let th = self.head.trace(&joint);
            let z = th.output[0];
            loss += w[i] * bce_with_logit(z, y[i]);
            let d = w[i] * (sigmoid(z) - y[i]) / total;
            let (ga, rest) = grad.split_at_mut(a);
            let (gb, gh) = rest.split_at_mut(b - a);
            let d_joint = self.head.backward(&th, &[d], gh);
            self.learned_tower.backward(&tl, &d_joint[..split], ga);
            self.engineered_tower.backward(&te, &d_joint[split..], gb);
        }
        (loss / total, grad)
    }

    pub fn save(&self, path: &Path) -> Result<(), CombineError> {
        let text = serde_json::to_string(self).map_err(|e| CombineError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub fn deep_fusion_train(
    xl: &[Vec<f64>],
    xe: &[Vec<f64>],
    y: &[u8],
    learn_config: &LearnConfig,
    config: &FusionConfig,
    seed: u64,
) -> Result<DeepFusion, CombineError> {
    if xl.len() != xe.len() {
        return Err(CombineError::RowMismatch {
            row: xl.len().min(xe.len()),
            what: "row count",
        });
    }
    learn::validate_rows(xl, y)?;
    learn::validate_rows(xe, y)?;
    let weights = learn::sample_weights(y, learn_config.class_weighting);
    let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let mut net = DeepFusion::new(xl[0].len(), xe[0].len(), config, rng::derive(seed, 0));
    net.learned_scaler = Scaler::fit(xl);
    net.engineered_scaler = Scaler::fit(xe);
    let sl: Vec<Vec<f64>> = xl.iter().map(|r| net.learned_scaler.transform(r)).collect();
    let se: Vec<Vec<f64>> = xe
        .iter()
        .map(|r| net.engineered_scaler.transform(r))
        .collect();
    let mut adam = Adam::new(net.param_count(), config.learning_rate);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut shuffle = rng::seeded(rng::derive(seed, 1));
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let bl: Vec<&[f64]> = chunk.iter().map(|&i| sl[i].as_slice()).collect();
            let be: Vec<&[f64]> = chunk.iter().map(|&i| se[i].as_slice()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let bw: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
            let (loss, grad) = net.loss_and_grad(&bl, &be, &by, &bw);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::NonFiniteLoss("deep fusion network").into());
            }
            adam.step(net.params_mut(), &grad);
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum CombinedModel {
    Ensemble {
        learned: TrainedModel,
        engineered: TrainedModel,
    },
    Concat {
        learned_len: usize,
        model: TrainedModel,
    },
    Fusion {
        net: DeepFusion,
    },
}

impl CombinedModel {
    pub fn strategy(&self) -> Strategy {
        match self {
            CombinedModel::Ensemble { .. } => Strategy::Ensemble,
            CombinedModel::Concat { .. } => Strategy::Concat,
            CombinedModel::Fusion { .. } => Strategy::Fusion,
        }
    }

    pub fn predict_proba(&self, xl: &[f64], xe: &[f64]) -> Result<f64, CombineError> {
        match self {
            CombinedModel::Ensemble {
                learned,
                engineered,
            } => ensemble_average(learned, engineered, xl, xe),
            CombinedModel::Concat { learned_len, model } => {
                if xl.len() != *learned_len {
                    return Err(CombineError::FeatureLength {
                        side: "learned",
                        expected: *learned_len,
                        got: xl.len(),
                    });
                }
                Ok(model.predict_proba(&naive_concat(xl, xe))?)
            }
            CombinedModel::Fusion { net } => net.predict_proba(xl, xe),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    strategy: Strategy,
    kind: LearnerKind,
    xl: &[Vec<f64>],
    xe: &[Vec<f64>],
    y: &[u8],
    learn_config: &LearnConfig,
    fusion: &FusionConfig,
    seed: u64,
) -> Result<CombinedModel, CombineError> {
    if xl.len() != xe.len() {
        return Err(CombineError::RowMismatch {
            row: xl.len().min(xe.len()),
            what: "row count",
        });
    }
    Ok(match strategy {
        Strategy::Ensemble => {
            let (learned, engineered) = rayon::join(
                || learn::train_matrix(kind, xl, y, learn_config, rng::derive(seed, 10)),
                || learn::train_matrix(kind, xe, y, learn_config, rng::derive(seed, 11)),
            );
            CombinedModel::Ensemble {
                learned: learned?,
                engineered: engineered?,
            }
        }
        Strategy::Concat => {
            let x: Vec<Vec<f64>> = xl.iter().zip(xe).map(|(a, b)| naive_concat(a, b)).collect();
            CombinedModel::Concat {
                learned_len: xl.first().map_or(0, Vec::len),
                model: learn::train_matrix(kind, &x, y, learn_config, seed)?,
            }
        }
        Strategy::Fusion => CombinedModel::Fusion {
            net: deep_fusion_train(xl, xe, y, learn_config, fusion, seed)?,
        },
    })
}

/// Cross-validates a combination strategy. Folds come from the learned
/// table's bug ids, so every strategy sees the same test memberships as a
/// single-set run with the same seed.
#[allow(clippy::too_many_arguments)]
pub fn crossval_combined(
    learned: &FeatureTable,
    engineered: &FeatureTable,
    strategy: Strategy,
    kind: LearnerKind,
    learn_config: &LearnConfig,
    fusion: &FusionConfig,
    spec: &CrossvalSpec,
    config_echo: serde_json::Value,
) -> crate::Result<CrossvalOutcome> {
    let engineered = learned.align(engineered)?;
    for (row, (a, b)) in learned.rows.iter().zip(&engineered.rows).enumerate() {
        if a.label != b.label {
            return Err(CombineError::RowMismatch { row, what: "label" }.into());
        }
        if a.bug_id != b.bug_id {
            return Err(CombineError::RowMismatch {
                row,
                what: "bug_id",
            }
            .into());
        }
    }
    let xl = learned.matrix();
    let xe = engineered.matrix();
    let y = learned.labels();
    let method = match strategy {
        Strategy::Fusion => "fusion".to_string(),
        s => format!("{}+{}", s.name(), kind.short_name()),
    };
    let mut out = eval::crossval_with(
        &eval::row_keys(learned),
        spec,
        &method,
        config_echo,
        |tr, te, seed| {
            let pick = |x: &[Vec<f64>], idx: &[usize]| {
                idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>()
            };
            let ty: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
            let model = train(
                strategy,
                kind,
                &pick(&xl, tr),
                &pick(&xe, tr),
                &ty,
                learn_config,
                fusion,
                seed,
            )?;
            te.iter()
                .map(|&i| model.predict_proba(&xl[i], &xe[i]).map_err(Into::into))
                .collect()
        },
    )?;
    out.report.strategy = Some(strategy.name().to_string());
    if strategy != Strategy::Fusion {
        out.report.learner = Some(kind.short_name().to_string());
    }
    Ok(out)
}
