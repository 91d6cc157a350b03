//! Similarity-based screening: score distributions over correct patches,
//! threshold inference and filtering, and per-bug top-1 selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::embed::{self, EmbeddingPair};
use crate::eval::{self, Confusion};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("no scores")]
    Empty,
    #[error("non-finite score")]
    NonFinite,
    #[error("patch `{0}` has no label; filtering needs correct/incorrect labels")]
    Unlabeled(String),
    #[error("fixed threshold must be finite")]
    BadThreshold,
}

/// Five-number summary plus mean. Quartiles use linear interpolation
/// between closest ranks: for sorted `x` and quantile `p`, `h = (n-1)p` and
/// `q = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn stats(scores: &[f64]) -> Result<SimilarityStats, FilterError> {
    if scores.is_empty() {
        return Err(FilterError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FilterError::NonFinite);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SimilarityStats {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        count: scores.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdStatistic {
    Q1,
    Mean,
    Median,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub statistic: ThresholdStatistic,
    pub value: f64,
}

impl ThresholdPolicy {
    /// Resolves a statistic-based policy against `stats`; `fixed` is used only
    /// for [`ThresholdStatistic::Fixed`].
    pub fn resolve(
        statistic: ThresholdStatistic,
        stats: &SimilarityStats,
        fixed: Option<f64>,
    ) -> Result<Self, FilterError> {
        let value = match statistic {
            ThresholdStatistic::Q1 => stats.q1,
            ThresholdStatistic::Mean => stats.mean,
            ThresholdStatistic::Median => stats.median,
            ThresholdStatistic::Fixed => fixed.ok_or(FilterError::BadThreshold)?,
        };
        Self::fixed_with(statistic, value)
    }

    pub fn fixed(value: f64) -> Result<Self, FilterError> {
        Self::fixed_with(ThresholdStatistic::Fixed, value)
    }

    fn fixed_with(statistic: ThresholdStatistic, value: f64) -> Result<Self, FilterError> {
        if !value.is_finite() {
            return Err(FilterError::BadThreshold);
        }
        Ok(ThresholdPolicy { statistic, value })
    }

    /// Boundary-inclusive: a score equal to the threshold is retained.
    pub fn retains(&self, score: f64) -> bool {
        score >= self.value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchScore {
    pub patch_id: String,
    pub score: f64,
    /// Set when a fragment embedding had zero norm.
    pub degenerate: bool,
}

/// Cosine similarity between buggy and patched embeddings, per pair, in order.
pub fn score_corpus(pairs: &[EmbeddingPair]) -> Result<Vec<PatchScore>, FilterError> {
    if pairs.is_empty() {
        return Err(FilterError::Empty);
    }
    Ok(pairs
        .iter()
        .map(|p| {
            // Pairs are validated on construction/import, so lengths agree.
            let c = embed::cosine_flagged(&p.buggy_vec, &p.patched_vec)
                .expect("validated embedding pair");
            PatchScore {
                patch_id: p.patch_id.clone(),
                score: c.value,
                degenerate: c.degenerate,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub patch_id: String,
    pub score: f64,
    pub label: Label,
    pub predicted_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub policy: ThresholdPolicy,
    pub verdicts: Vec<Verdict>,
    /// Correct patches retained.
    pub plus_cp: usize,
    /// Incorrect patches filtered out.
    pub minus_ip: usize,
    pub plus_recall: f64,
    pub minus_recall: f64,
    pub confusion: Confusion,
}

pub fn filter_by_threshold(
    scores: &[(String, f64, Label)],
    policy: &ThresholdPolicy,
) -> Result<FilterOutcome, FilterError> {
    let mut verdicts = Vec::with_capacity(scores.len());
    let mut confusion = Confusion::default();
    for (id, score, label) in scores {
        let truth = label
            .as_target()
            .ok_or_else(|| FilterError::Unlabeled(id.clone()))?;
        let predicted = policy.retains(*score);
        confusion.record(predicted, truth == 1);
        verdicts.push(Verdict {
            patch_id: id.clone(),
            score: *score,
            label: *label,
            predicted_correct: predicted,
        });
    }
    let m = eval::metrics_from_confusion(&confusion);
    Ok(FilterOutcome {
        policy: *policy,
        verdicts,
        plus_cp: confusion.tp,
        minus_ip: confusion.tn,
        plus_recall: m.plus_recall,
        minus_recall: m.minus_recall,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPatch {
    pub patch_id: String,
    pub bug_id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugSelection {
    pub bug_id: String,
    pub selected: String,
    pub selected_is_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Outcome {
    pub selections: Vec<BugSelection>,
    pub verdicts: Vec<Verdict>,
    /// Fraction of bugs whose selected patch is truly correct.
    pub fraction_correct: f64,
}

/// Marks the best-scoring patch of every bug as correct (ties go to the
/// lexicographically smallest patch id) and all others as incorrect.
pub fn top1_per_bug(scores: &[ScoredPatch]) -> Result<Top1Outcome, FilterError> {
    if scores.is_empty() {
        return Err(FilterError::Empty);
    }
    let mut best: BTreeMap<&str, &ScoredPatch> = BTreeMap::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(FilterError::NonFinite);
        }
        best.entry(&s.bug_id)
            .and_modify(|cur| {
                if s.score > cur.score || (s.score == cur.score && s.patch_id < cur.patch_id) {
                    *cur = s;
                }
            })
            .or_insert(s);
    }
    let selections: Vec<BugSelection> = best
        .values()
        .map(|s| BugSelection {
            bug_id: s.bug_id.clone(),
            selected: s.patch_id.clone(),
            selected_is_correct: s.label == Label::Correct,
        })
        .collect();
    let verdicts = scores
        .iter()
        .map(|s| Verdict {
            patch_id: s.patch_id.clone(),
            score: s.score,
            label: s.label,
            predicted_correct: best[s.bug_id.as_str()].patch_id == s.patch_id,
        })
        .collect();
    let hits = selections.iter().filter(|s| s.selected_is_correct).count();
    Ok(Top1Outcome {
        fraction_correct: hits as f64 / selections.len() as f64,
        selections,
        verdicts,
    })
}
