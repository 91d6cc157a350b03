//! Run configuration: one JSON file whose every field has a default, with
//! command-line flags layered on top. The effective configuration is echoed
//! into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::combine::{FusionConfig, Strategy};
use crate::embed::EmbedderConfig;
use crate::eval::{Averaging, CrossvalSpec, DEFAULT_THRESHOLD};
use crate::explain::DEFAULT_BACKGROUND_CAP;
use crate::filter::ThresholdStatistic;
use crate::learn::{LearnConfig, LearnerKind};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSelection {
    /// Crossed embedding features.
    Learned,
    /// Engineered repair features.
    Engineered,
    /// Both, concatenated.
    Concat,
}

/// Input paths default to the files earlier stages write into the output
/// directory, so stages chain without extra flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            embeddings: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Paths {
    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }

    pub fn corpus(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.out("corpus.jsonl"))
    }

    pub fn embeddings(&self) -> PathBuf {
        self.embeddings
            .clone()
            .unwrap_or_else(|| self.out("embeddings.jsonl"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub statistic: ThresholdStatistic,
    /// Used when `statistic` is `fixed`.
    pub value: Option<f64>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            statistic: ThresholdStatistic::Q1,
            value: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub embedder: EmbedderConfig,
    pub features: FeatureSelection,
    pub learner: LearnerKind,
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub averaging: Averaging,
    pub decision_threshold: f64,
    pub threshold: ThresholdConfig,
    pub background_cap: usize,
    pub learn: LearnConfig,
    pub fusion: FusionConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            embedder: EmbedderConfig::default(),
            features: FeatureSelection::Learned,
            learner: LearnerKind::GradientBoostedTrees,
            strategy: Strategy::Concat,
            k: 10,
            seed: 42,
            averaging: Averaging::Macro,
            decision_threshold: DEFAULT_THRESHOLD,
            threshold: ThresholdConfig::default(),
            background_cap: DEFAULT_BACKGROUND_CAP,
            learn: LearnConfig::default(),
            fusion: FusionConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; missing fields take their defaults, unknown
    /// top-level fields are rejected.
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(obj) = value.as_object() {
            let known = serde_json::to_value(RunConfig::default())?;
            for key in obj.keys() {
                if known.get(key).is_none() {
                    let msg = format!("unknown config field `{key}`");
                    return Err(crate::Error::Json(serde::de::Error::custom(msg)));
                }
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn crossval_spec(&self) -> CrossvalSpec {
        CrossvalSpec {
            k: self.k,
            seed: self.seed,
            threshold: self.decision_threshold,
            averaging: self.averaging,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
