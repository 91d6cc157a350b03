//! Binary classifiers behind one train / predict-probability interface.
//!
//! Six learners are available: L2-regularized logistic regression, Gaussian
//! naive Bayes, a CART tree, a random forest, gradient-boosted trees on the
//! logistic loss and a small feed-forward network. Trained models serialize
//! to versioned JSON.

pub mod boosting;
pub mod forest;
pub mod logistic;
pub mod naive_bayes;
pub mod net;
pub mod tree;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boosting::{BoostedTrees, BoostingConfig};
pub use forest::{Forest, ForestConfig};
pub use logistic::{LogisticConfig, LogisticModel};
pub use naive_bayes::{NaiveBayesConfig, NaiveBayesModel};
pub use net::{FeedForwardNet, NetConfig};
pub use tree::{Node, Tree, TreeConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error(
        "training data contains a single class; both correct and incorrect patches are required"
    )]
    SingleClass,
    #[error("row {row}: expected {expected} features, got {got}")]
    FeatureCount {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row}: non-finite feature value")]
    NonFinite { row: usize },
    #[error("row {row}: label must be 0 or 1")]
    BadLabel { row: usize },
    #[error("non-finite training loss ({0}); lower the learning rate")]
    NonFiniteLoss(&'static str),
    #[error("model expects {expected} features, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("unsupported model format version {found} (this build reads {MODEL_FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("model kind `{declared}` does not match its parameters")]
    KindMismatch { declared: String },
    #[error("cannot read model: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
pub enum LearnerKind {
    #[serde(rename = "lr")]
    #[value(name = "lr")]
    LogisticRegression,
    #[serde(rename = "nb")]
    #[value(name = "nb")]
    NaiveBayes,
    #[serde(rename = "dt")]
    #[value(name = "dt")]
    DecisionTree,
    #[serde(rename = "rf")]
    #[value(name = "rf")]
    RandomForest,
    #[serde(rename = "gbt")]
    #[value(name = "gbt")]
    GradientBoostedTrees,
    #[serde(rename = "dnn")]
    #[value(name = "dnn")]
    FeedForwardNet,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 6] = [
        LearnerKind::LogisticRegression,
        LearnerKind::NaiveBayes,
        LearnerKind::DecisionTree,
        LearnerKind::RandomForest,
        LearnerKind::GradientBoostedTrees,
        LearnerKind::FeedForwardNet,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            LearnerKind::LogisticRegression => "lr",
            LearnerKind::NaiveBayes => "nb",
            LearnerKind::DecisionTree => "dt",
            LearnerKind::RandomForest => "rf",
            LearnerKind::GradientBoostedTrees => "gbt",
            LearnerKind::FeedForwardNet => "dnn",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.short_name() == s)
    }

    pub fn is_tree_ensemble(self) -> bool {
        matches!(
            self,
            LearnerKind::DecisionTree
                | LearnerKind::RandomForest
                | LearnerKind::GradientBoostedTrees
        )
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub patch_id: String,
    pub bug_id: String,
    pub features: Vec<f64>,
    /// 1 = correct, 0 = incorrect.
    pub label: u8,
}

/// Hyperparameters for every learner. All fields have committed defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub logistic: LogisticConfig,
    pub naive_bayes: NaiveBayesConfig,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub boosting: BoostingConfig,
    pub net: NetConfig,
    /// Inverse class-frequency sample weights.
    pub class_weighting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum ModelParams {
    #[serde(rename = "lr")]
    Logistic(LogisticModel),
    #[serde(rename = "nb")]
    NaiveBayes(NaiveBayesModel),
    #[serde(rename = "dt")]
    DecisionTree(Tree),
    #[serde(rename = "rf")]
    RandomForest(Forest),
    #[serde(rename = "gbt")]
    GradientBoostedTrees(BoostedTrees),
    #[serde(rename = "dnn")]
    FeedForwardNet(FeedForwardNet),
}

impl ModelParams {
    pub fn kind(&self) -> LearnerKind {
        match self {
            ModelParams::Logistic(_) => LearnerKind::LogisticRegression,
            ModelParams::NaiveBayes(_) => LearnerKind::NaiveBayes,
            ModelParams::DecisionTree(_) => LearnerKind::DecisionTree,
            ModelParams::RandomForest(_) => LearnerKind::RandomForest,
            ModelParams::GradientBoostedTrees(_) => LearnerKind::GradientBoostedTrees,
            ModelParams::FeedForwardNet(_) => LearnerKind::FeedForwardNet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub feature_count: usize,
    pub seed: u64,
    pub config: LearnConfig,
    #[serde(flatten)]
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }

    pub fn from_params(params: ModelParams, feature_count: usize) -> Self {
        TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_count,
            seed: 0,
            config: LearnConfig::default(),
            params,
        }
    }

    /// Probability that the patch is correct.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.feature_count {
            return Err(LearnError::InputLength {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        let p = match &self.params {
            ModelParams::Logistic(m) => m.predict_proba(x),
            ModelParams::NaiveBayes(m) => m.predict_proba(x),
            ModelParams::DecisionTree(t) => t.predict(x),
            ModelParams::RandomForest(f) => f.predict_proba(x),
            ModelParams::GradientBoostedTrees(b) => b.predict_proba(x),
            ModelParams::FeedForwardNet(n) => n.predict_proba(x),
        };
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self).map_err(|e| LearnError::Parse(e.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let value: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| LearnError::Parse(e.to_string()))?;
        Self::from_json(value)
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, LearnError> {
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| LearnError::Parse("missing format_version".into()))?;
        if version != u64::from(MODEL_FORMAT_VERSION) {
            return Err(LearnError::Version { found: version });
        }
        let kind = value
            .get("kind")
            .and_then(serde_json::Value::as_str)
            .ok_or_else(|| LearnError::Parse("missing kind".into()))?
            .to_string();
        if LearnerKind::from_short_name(&kind).is_none() {
            return Err(LearnError::UnknownKind(kind));
        }
        serde_json::from_value(value).map_err(|e| {
            if e.to_string().contains("params") {
                LearnError::KindMismatch { declared: kind }
            } else {
                LearnError::Parse(e.to_string())
            }
        })
    }
}

/// Checks shape, finiteness, labels and class balance of a training set.
pub fn validate_rows(x: &[Vec<f64>], y: &[u8]) -> Result<usize, LearnError> {
    if x.len() < 2 {
        return Err(LearnError::TooFewRows(x.len()));
    }
    let p = x[0].len();
    for (row, (features, &label)) in x.iter().zip(y).enumerate() {
        if features.len() != p {
            return Err(LearnError::FeatureCount {
                row,
                expected: p,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite { row });
        }
        if label > 1 {
            return Err(LearnError::BadLabel { row });
        }
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(LearnError::SingleClass);
    }
    Ok(p)
}

/// Per-sample weights: all ones, or inverse class frequency scaled so the
/// weights sum to the number of rows.
pub fn sample_weights(y: &[u8], class_weighting: bool) -> Vec<f64> {
    if !class_weighting {
        return vec![1.0; y.len()];
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&l| l == 1).count() as f64;
    let neg = n - pos;
    y.iter()
        .map(|&l| {
            if l == 1 {
                n / (2.0 * pos)
            } else {
                n / (2.0 * neg)
            }
        })
        .collect()
}

pub fn train_matrix(
    kind: LearnerKind,
    x: &[Vec<f64>],
    y: &[u8],
    config: &LearnConfig,
    seed: u64,
) -> Result<TrainedModel, LearnError> {
    let p = validate_rows(x, y)?;
    let weights = sample_weights(y, config.class_weighting);
    let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let params = match kind {
        LearnerKind::LogisticRegression => {
            ModelParams::Logistic(logistic::fit(x, &targets, &weights, &config.logistic)?)
        }
        LearnerKind::NaiveBayes => {
            ModelParams::NaiveBayes(naive_bayes::fit(x, &targets, &weights, &config.naive_bayes))
        }
        LearnerKind::DecisionTree => {
            ModelParams::DecisionTree(forest::fit_cart(x, &targets, &weights, &config.tree, seed))
        }
        LearnerKind::RandomForest => {
            ModelParams::RandomForest(forest::fit(x, &targets, &weights, &config.forest, seed))
        }
        LearnerKind::GradientBoostedTrees => ModelParams::GradientBoostedTrees(boosting::fit(
            x,
            &targets,
            &weights,
            &config.boosting,
        )?),
        LearnerKind::FeedForwardNet => {
            ModelParams::FeedForwardNet(net::fit(x, &targets, &weights, &config.net, seed)?)
        }
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_count: p,
        seed,
        config: config.clone(),
        params,
    })
}

pub fn train(
    kind: LearnerKind,
    rows: &[FeatureRow],
    config: &LearnConfig,
    seed: u64,
) -> Result<TrainedModel, LearnError> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    let y: Vec<u8> = rows.iter().map(|r| r.label).collect();
    train_matrix(kind, &x, &y, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut r = rng::seeded(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 2.0 } else { -2.0 };
            x.push(vec![
                c + rng::normal(&mut r) * 0.7,
                c + rng::normal(&mut r) * 0.7,
            ]);
            y.push(label);
        }
        (x, y)
    }

    fn accuracy(m: &TrainedModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
        let hits = x
            .iter()
            .zip(y)
            .filter(|(row, &l)| (m.predict_proba(row).unwrap() >= 0.5) == (l == 1))
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn every_learner_fits_separable_blobs() {
        let (x, y) = blobs(120, 11);
        for kind in LearnerKind::ALL {
            let m = train_matrix(kind, &x, &y, &LearnConfig::default(), 5).unwrap();
            let acc = accuracy(&m, &x, &y);
            assert!(acc >= 0.95, "{kind}: {acc}");
        }
    }

    #[test]
    fn xor_needs_depth() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = vec![0, 1, 1, 0];
        let cfg = LearnConfig {
            tree: TreeConfig {
                max_depth: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let dt = train_matrix(LearnerKind::DecisionTree, &x, &y, &cfg, 0).unwrap();
        assert_eq!(accuracy(&dt, &x, &y), 1.0);
        let lr = train_matrix(LearnerKind::LogisticRegression, &x, &y, &cfg, 0).unwrap();
        assert!(accuracy(&lr, &x, &y) <= 0.75);
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        for kind in LearnerKind::ALL {
            assert!(matches!(
                train_matrix(kind, &x, &[1, 1, 1], &LearnConfig::default(), 0),
                Err(LearnError::SingleClass)
            ));
        }
        assert!(matches!(
            train_matrix(
                LearnerKind::NaiveBayes,
                &x[..1],
                &[1],
                &LearnConfig::default(),
                0
            ),
            Err(LearnError::TooFewRows(1))
        ));
    }

    #[test]
    fn zero_weight_logistic_is_one_half() {
        let m = TrainedModel::from_params(ModelParams::Logistic(LogisticModel::zeros(3)), 3);
        assert_eq!(m.predict_proba(&[5.0, -2.0, 1e6]).unwrap(), 0.5);
    }

    #[test]
    fn single_leaf_tree_reports_leaf_frequency() {
        let x = vec![vec![1.0]; 4];
        let y = vec![1, 1, 1, 0];
        let m = train_matrix(
            LearnerKind::DecisionTree,
            &x,
            &y,
            &LearnConfig::default(),
            0,
        )
        .unwrap();
        for v in [-10.0, 1.0, 10.0] {
            assert_eq!(m.predict_proba(&[v]).unwrap(), 0.75);
        }
    }

    #[test]
    fn forest_averages_tree_probabilities() {
        let f = Forest {
            trees: vec![Tree::leaf(0.2, 1.0), Tree::leaf(0.6, 1.0)],
        };
        let m = TrainedModel::from_params(ModelParams::RandomForest(f), 1);
        assert!((m.predict_proba(&[0.0]).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_wrong_length() {
        let m = TrainedModel::from_params(ModelParams::Logistic(LogisticModel::zeros(2)), 2);
        assert!(matches!(
            m.predict_proba(&[1.0]),
            Err(LearnError::InputLength {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let (x, y) = blobs(80, 2);
        for kind in LearnerKind::ALL {
            let m = train_matrix(kind, &x, &y, &LearnConfig::default(), 9).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            m.save(f.path()).unwrap();
            let back = TrainedModel::load(f.path()).unwrap();
            let mut r = rng::seeded(1);
            for _ in 0..100 {
                let q = vec![rng::normal(&mut r) * 3.0, rng::normal(&mut r) * 3.0];
                assert_eq!(
                    m.predict_proba(&q).unwrap(),
                    back.predict_proba(&q).unwrap(),
                    "{kind}"
                );
            }
        }
    }

    #[test]
    fn load_rejects_unknown_kind_version_and_truncation() {
        let (x, y) = blobs(20, 2);
        let m = train_matrix(
            LearnerKind::DecisionTree,
            &x,
            &y,
            &LearnConfig::default(),
            1,
        )
        .unwrap();
        let mut v = serde_json::to_value(&m).unwrap();
        v["kind"] = "svm".into();
        assert!(matches!(
            TrainedModel::from_json(v.clone()),
            Err(LearnError::UnknownKind(_))
        ));
        v["kind"] = "gbt".into();
        assert!(TrainedModel::from_json(v.clone()).is_err());
        v["kind"] = "dt".into();
        v["format_version"] = 99.into();
        assert!(matches!(
            TrainedModel::from_json(v),
            Err(LearnError::Version { found: 99 })
        ));

        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        std::fs::write(f.path(), &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            TrainedModel::load(f.path()),
            Err(LearnError::Parse(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(60, 4);
        for kind in LearnerKind::ALL {
            let a = train_matrix(kind, &x, &y, &LearnConfig::default(), 3).unwrap();
            let b = train_matrix(kind, &x, &y, &LearnConfig::default(), 3).unwrap();
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap(),
                "{kind}"
            );
        }
    }

    #[test]
    fn class_weights_balance_the_classes() {
        let w = sample_weights(&[1, 0, 0, 0], true);
        assert_eq!(w, vec![2.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(sample_weights(&[1, 0], false), vec![1.0, 1.0]);
    }

    fn shared_models() -> &'static Vec<TrainedModel> {
        static MODELS: std::sync::OnceLock<Vec<TrainedModel>> = std::sync::OnceLock::new();
        MODELS.get_or_init(|| {
            let (x, y) = blobs(40, 8);
            LearnerKind::ALL
                .iter()
                .map(|&k| train_matrix(k, &x, &y, &LearnConfig::default(), 1).unwrap())
                .collect()
        })
    }

    proptest::proptest! {
        #[test]
        fn probabilities_stay_in_unit_interval(q in proptest::collection::vec(-1e3f64..1e3, 2)) {
            for m in shared_models() {
                let p = m.predict_proba(&q).unwrap();
                proptest::prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
