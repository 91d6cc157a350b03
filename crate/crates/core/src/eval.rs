//! Confusion-matrix metrics, rank-based AUC, bug-disjoint k-fold
//! cross-validation and comparison of out-of-fold prediction sets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, FoldPlan};
use crate::featureio::FeatureTable;
use crate::learn::{self, LearnConfig, LearnerKind};
use crate::rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to score")]
    Empty,
    #[error("AUC needs both classes; got only label {0}")]
    SingleClass(u8),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error(
        "fold {fold}: training split contains a single class; try another --seed or a smaller --k"
    )]
    SingleClassFold { fold: usize },
    #[error("fold {fold}: model returned {got} predictions for {expected} test rows")]
    PredictionCount {
        fold: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path} line {line}: {reason}")]
    Row {
        path: String,
        line: u64,
        reason: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    #[serde(rename = "TP")]
    pub tp: usize,
    #[serde(rename = "FP")]
    pub fp: usize,
    #[serde(rename = "TN")]
    pub tn: usize,
    #[serde(rename = "FN")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, predicted_correct: bool, actually_correct: bool) {
        match (predicted_correct, actually_correct) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Threshold metrics. A metric whose denominator is zero is reported as 0
/// and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub plus_recall: f64,
    pub minus_recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub undefined: Vec<String>,
}

impl Metrics {
    pub fn is_defined(&self, metric: &str) -> bool {
        !self.undefined.iter().any(|m| m == metric)
    }
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_confusion(c: &Confusion) -> Metrics {
    let mut undefined = Vec::new();
    let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut undefined);
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let plus_recall = ratio(c.tp, c.tp + c.fn_, "plus_recall", &mut undefined);
    let minus_recall = ratio(c.tn, c.tn + c.fp, "minus_recall", &mut undefined);
    let f1 = if undefined
        .iter()
        .any(|m| m == "precision" || m == "plus_recall")
        || precision + plus_recall == 0.0
    {
        undefined.push("f1".to_string());
        0.0
    } else {
        2.0 * precision * plus_recall / (precision + plus_recall)
    };
    Metrics {
        accuracy,
        precision,
        plus_recall,
        minus_recall,
        f1,
        undefined,
    }
}

/// Predicted correct iff probability >= threshold.
pub fn confusion(predictions: &[(f64, u8)], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for &(p, label) in predictions {
        c.record(p >= threshold, label == 1);
    }
    c
}

pub fn confusion_metrics(predictions: &[(f64, u8)], threshold: f64) -> Metrics {
    metrics_from_confusion(&confusion(predictions, threshold))
}

/// Mann-Whitney AUC with midranks, so tied scores count one half.
pub fn auc(predictions: &[(f64, u8)]) -> Result<f64, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = predictions.iter().position(|(p, _)| !p.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = predictions.iter().filter(|(_, l)| *l == 1).count();
    let n_neg = predictions.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass(predictions[0].1));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].0.total_cmp(&predictions[b].0));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && predictions[order[j + 1]].0 == predictions[order[i]].0 {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the midrank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j]
            .iter()
            .filter(|&&k| predictions[k].1 == 1)
            .count();
        pos_rank_sum += midrank * pos_in_block as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-fold metrics.
    #[default]
    Macro,
    /// Metrics over all out-of-fold predictions pooled together.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalSpec {
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub averaging: Averaging,
}

impl Default for CrossvalSpec {
    fn default() -> Self {
        CrossvalSpec {
            k: 10,
            seed: 42,
            threshold: DEFAULT_THRESHOLD,
            averaging: Averaging::Macro,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_size: usize,
    pub test_bugs: Vec<String>,
    pub confusion: Confusion,
    #[serde(flatten)]
    pub metrics: Metrics,
    /// Absent when the test fold holds a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofPrediction {
    pub patch_id: String,
    pub bug_id: String,
    pub label: u8,
    pub probability: f64,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub learner: Option<String>,
    pub strategy: Option<String>,
    pub averaging: Averaging,
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub plus_recall: f64,
    pub minus_recall: f64,
    pub f1: f64,
    pub auc: f64,
    /// Folds left out of each macro mean because the metric was undefined.
    pub excluded_folds: BTreeMap<String, Vec<usize>>,
    /// Summed over all folds.
    pub confusion: Confusion,
    pub per_fold: Vec<FoldReport>,
    pub config_echo: serde_json::Value,
}

pub struct CrossvalOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<OofPrediction>,
}

/// Identity of one row for fold assignment and reporting.
#[derive(Debug, Clone)]
pub struct RowKey<'a> {
    pub patch_id: &'a str,
    pub bug_id: &'a str,
    pub label: u8,
}

pub fn row_keys(table: &FeatureTable) -> Vec<RowKey<'_>> {
    table
        .rows
        .iter()
        .map(|r| RowKey {
            patch_id: &r.patch_id,
            bug_id: &r.bug_id,
            label: r.label,
        })
        .collect()
}

pub fn fold_plan(
    rows: &[RowKey<'_>],
    spec: &CrossvalSpec,
) -> Result<FoldPlan, corpus::CorpusError> {
    corpus::split_bugs(rows.iter().map(|r| r.bug_id), spec.k, spec.seed)
}

/// Runs k-fold cross-validation over bug-disjoint folds. `fit_predict`
/// receives train and test row indices plus a per-fold seed and returns one
/// probability per test row. Folds run in parallel; results do not depend on
/// scheduling.
pub fn crossval_with<F>(
    rows: &[RowKey<'_>],
    spec: &CrossvalSpec,
    method: &str,
    config_echo: serde_json::Value,
    fit_predict: F,
) -> crate::Result<CrossvalOutcome>
where
    F: Fn(&[usize], &[usize], u64) -> crate::Result<Vec<f64>> + Sync,
{
    let plan = fold_plan(rows, spec)?;
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.k())
        .map(|f| plan.train_test(f, rows.iter().map(|r| r.bug_id)))
        .collect();
    for (fold, (train, _)) in folds.iter().enumerate() {
        let pos = train.iter().filter(|&&i| rows[i].label == 1).count();
        if pos == 0 || pos == train.len() {
            return Err(EvalError::SingleClassFold { fold }.into());
        }
    }
    let probs: Vec<Vec<f64>> = folds
        .par_iter()
        .enumerate()
        .map(|(fold, (train, test))| {
            let p = fit_predict(train, test, rng::derive(spec.seed, fold as u64))?;
            if p.len() != test.len() {
                return Err(EvalError::PredictionCount {
                    fold,
                    expected: test.len(),
                    got: p.len(),
                }
                .into());
            }
            Ok(p)
        })
        .collect::<crate::Result<_>>()?;

    let mut oof: Vec<Option<OofPrediction>> = vec![None; rows.len()];
    let mut per_fold = Vec::with_capacity(plan.k());
    for (fold, ((_, test), p)) in folds.iter().zip(&probs).enumerate() {
        let preds: Vec<(f64, u8)> = test
            .iter()
            .zip(p)
            .map(|(&i, &q)| (q, rows[i].label))
            .collect();
        let conf = confusion(&preds, spec.threshold);
        per_fold.push(FoldReport {
            fold,
            test_size: test.len(),
            test_bugs: plan.groups[fold].iter().cloned().collect(),
            confusion: conf,
            metrics: metrics_from_confusion(&conf),
            auc: auc(&preds).ok(),
        });
        for (&i, &q) in test.iter().zip(p) {
            oof[i] = Some(OofPrediction {
                patch_id: rows[i].patch_id.to_string(),
                bug_id: rows[i].bug_id.to_string(),
                label: rows[i].label,
                probability: q,
                fold,
            });
        }
    }
    let predictions: Vec<OofPrediction> = oof
        .into_iter()
        .map(|o| o.expect("every row is tested once"))
        .collect();

    let mut total = Confusion::default();
    for f in &per_fold {
        total.add(&f.confusion);
    }
    let mut excluded_folds = BTreeMap::new();
    let (headline, headline_auc) = match spec.averaging {
        Averaging::Macro => {
            let mut mean = |name: &str, get: &dyn Fn(&FoldReport) -> Option<f64>| {
                let vals: Vec<f64> = per_fold.iter().filter_map(get).collect();
                let skipped: Vec<usize> = per_fold
                    .iter()
                    .filter(|f| get(f).is_none())
                    .map(|f| f.fold)
                    .collect();
                if !skipped.is_empty() {
                    excluded_folds.insert(name.to_string(), skipped);
                }
                if vals.is_empty() {
                    0.0
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            let pick = |name: &'static str, v: fn(&Metrics) -> f64| {
                move |f: &FoldReport| f.metrics.is_defined(name).then(|| v(&f.metrics))
            };
            let m = Metrics {
                accuracy: mean("accuracy", &pick("accuracy", |m| m.accuracy)),
                precision: mean("precision", &pick("precision", |m| m.precision)),
                plus_recall: mean("plus_recall", &pick("plus_recall", |m| m.plus_recall)),
                minus_recall: mean("minus_recall", &pick("minus_recall", |m| m.minus_recall)),
                f1: mean("f1", &pick("f1", |m| m.f1)),
                undefined: Vec::new(),
            };
            let a = mean("auc", &|f: &FoldReport| f.auc);
            (m, a)
        }
        Averaging::Micro => {
            let pooled: Vec<(f64, u8)> = predictions
                .iter()
                .map(|p| (p.probability, p.label))
                .collect();
            let m = metrics_from_confusion(&total);
            for u in &m.undefined {
                excluded_folds.insert(u.clone(), Vec::new());
            }
            (m, auc(&pooled).unwrap_or(0.0))
        }
    };

    let report = MetricsReport {
        method: method.to_string(),
        learner: None,
        strategy: None,
        averaging: spec.averaging,
        k: spec.k,
        seed: spec.seed,
        threshold: spec.threshold,
        accuracy: headline.accuracy,
        precision: headline.precision,
        plus_recall: headline.plus_recall,
        minus_recall: headline.minus_recall,
        f1: headline.f1,
        auc: headline_auc,
        excluded_folds,
        confusion: total,
        per_fold,
        config_echo,
    };
    Ok(CrossvalOutcome {
        report,
        predictions,
    })
}

/// Cross-validates a single learner on one feature table.
pub fn crossval(
    table: &FeatureTable,
    kind: LearnerKind,
    config: &LearnConfig,
    spec: &CrossvalSpec,
    config_echo: serde_json::Value,
) -> crate::Result<CrossvalOutcome> {
    let x = table.matrix();
    let y = table.labels();
    let mut out = crossval_with(
        &row_keys(table),
        spec,
        kind.short_name(),
        config_echo,
        |train, test, seed| {
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let model = learn::train_matrix(kind, &tx, &ty, config, seed)?;
            test.iter()
                .map(|&i| model.predict_proba(&x[i]).map_err(Into::into))
                .collect()
        },
    )?;
    out.report.learner = Some(kind.short_name().to_string());
    Ok(out)
}

pub fn write_predictions(path: &Path, predictions: &[OofPrediction]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for p in predictions {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<OofPrediction>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let p: OofPrediction = rec.map_err(|e| EvalError::Row {
            path: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub both: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub neither: usize,
}

/// Set overlap between two runs over the patches both scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub threshold: f64,
    pub shared_patches: usize,
    pub only_in_a: usize,
    pub only_in_b: usize,
    /// Correct patches each run identified as correct.
    pub correct_identified: Overlap,
    /// Incorrect patches each run filtered out.
    pub incorrect_filtered: Overlap,
}

pub fn compare(a: &[OofPrediction], b: &[OofPrediction], threshold: f64) -> CompareReport {
    let ia: BTreeMap<&str, &OofPrediction> = a.iter().map(|p| (p.patch_id.as_str(), p)).collect();
    let ib: BTreeMap<&str, &OofPrediction> = b.iter().map(|p| (p.patch_id.as_str(), p)).collect();
    let ka: BTreeSet<&str> = ia.keys().copied().collect();
    let kb: BTreeSet<&str> = ib.keys().copied().collect();
    let mut correct = Overlap::default();
    let mut incorrect = Overlap::default();
    for id in ka.intersection(&kb) {
        let (pa, pb) = (ia[id], ib[id]);
        let (hit_a, hit_b, slot) = if pa.label == 1 {
            (
                pa.probability >= threshold,
                pb.probability >= threshold,
                &mut correct,
            )
        } else {
            (
                pa.probability < threshold,
                pb.probability < threshold,
                &mut incorrect,
            )
        };
        match (hit_a, hit_b) {
            (true, true) => slot.both += 1,
            (true, false) => slot.only_a += 1,
            (false, true) => slot.only_b += 1,
            (false, false) => slot.neither += 1,
        }
    }
    CompareReport {
        threshold,
        shared_patches: ka.intersection(&kb).count(),
        only_in_a: ka.difference(&kb).count(),
        only_in_b: kb.difference(&ka).count(),
        correct_identified: correct,
        incorrect_filtered: incorrect,
    }
}
