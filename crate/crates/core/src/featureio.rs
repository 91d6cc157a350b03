//! Feature-matrix interchange: CSV with `patch_id, bug_id, label` followed by
//! one column per named feature. Labels are 0/1, or empty for unlabeled rows.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, PatchRecord};
use crate::embed::EmbeddingPair;
use crate::learn::FeatureRow;
use crate::{crossing, engineered};

#[derive(Debug, Error)]
pub enum FeatureIoError {
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: String, column: String },
    #[error("{path} line {line}: {reason}")]
    Row {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("feature tables do not cover the same patches (first mismatch: `{0}`)")]
    Misaligned(String),
    #[error("duplicate patch_id `{0}`")]
    Duplicate(String),
    #[error("feature table has no rows")]
    Empty,
    #[error("patch `{0}` is unlabeled; feature tables need correct/incorrect labels")]
    Unlabeled(String),
    #[error("no embedding for patch `{0}`")]
    MissingEmbedding(String),
    #[error("patch `{patch_id}`: {reason}")]
    Extraction { patch_id: String, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const ID_COLUMNS: [&str; 3] = ["patch_id", "bug_id", "label"];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Reorders `other` to follow this table's patch order. Both tables must
    /// hold exactly the same patch ids.
    pub fn align(&self, other: &FeatureTable) -> Result<FeatureTable, FeatureIoError> {
        let index: BTreeMap<&str, &FeatureRow> = other
            .rows
            .iter()
            .map(|r| (r.patch_id.as_str(), r))
            .collect();
        if index.len() != self.rows.len() || other.rows.len() != self.rows.len() {
            let missing = self
                .rows
                .iter()
                .find(|r| !index.contains_key(r.patch_id.as_str()))
                .map_or_else(
                    || {
                        other
                            .rows
                            .first()
                            .map_or(String::new(), |r| r.patch_id.clone())
                    },
                    |r| r.patch_id.clone(),
                );
            return Err(FeatureIoError::Misaligned(missing));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                index
                    .get(r.patch_id.as_str())
                    .map(|&o| (*o).clone())
                    .ok_or_else(|| FeatureIoError::Misaligned(r.patch_id.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(FeatureTable {
            names: other.names.clone(),
            rows,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureIoError> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<&str> = ID_COLUMNS
            .iter()
            .copied()
            .chain(self.names.iter().map(String::as_str))
            .collect();
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.patch_id.clone(), r.bug_id.clone(), r.label.to_string()];
            rec.extend(r.features.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureTable, FeatureIoError> {
        let p = path.display().to_string();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        for (i, col) in ID_COLUMNS.iter().enumerate() {
            if header.get(i) != Some(*col) {
                return Err(FeatureIoError::MissingColumn {
                    path: p,
                    column: (*col).to_string(),
                });
            }
        }
        let names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |pos| pos.line());
            let bad = |reason: String| FeatureIoError::Row {
                path: p.clone(),
                line,
                reason,
            };
            let label = match &rec[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("label must be 0 or 1, got `{other}`"))),
            };
            let features = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("`{v}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if features.len() != names.len() {
                return Err(bad(format!(
                    "expected {} features, got {}",
                    names.len(),
                    features.len()
                )));
            }
            if !seen.insert(rec[0].to_string()) {
                return Err(FeatureIoError::Duplicate(rec[0].to_string()));
            }
            rows.push(FeatureRow {
                patch_id: rec[0].to_string(),
                bug_id: rec[1].to_string(),
                features,
                label,
            });
        }
        if rows.is_empty() {
            return Err(FeatureIoError::Empty);
        }
        Ok(FeatureTable { names, rows })
    }
}

fn labeled(rec: &PatchRecord, features: Vec<f64>) -> Result<FeatureRow, FeatureIoError> {
    Ok(FeatureRow {
        patch_id: rec.patch_id.clone(),
        bug_id: rec.bug_id.clone(),
        features,
        label: rec
            .label
            .as_target()
            .ok_or_else(|| FeatureIoError::Unlabeled(rec.patch_id.clone()))?,
    })
}

/// Crossed embedding features (`B-i`) for every corpus record.
pub fn learned_table(
    corpus: &Corpus,
    pairs: &[EmbeddingPair],
) -> Result<FeatureTable, FeatureIoError> {
    let index: BTreeMap<&str, &EmbeddingPair> =
        pairs.iter().map(|p| (p.patch_id.as_str(), p)).collect();
    let mut rows = Vec::with_capacity(corpus.len());
    let mut dim = None;
    for rec in &corpus.records {
        let pair = index
            .get(rec.patch_id.as_str())
            .ok_or_else(|| FeatureIoError::MissingEmbedding(rec.patch_id.clone()))?;
        let crossed = crossing::cross(pair).map_err(|e| FeatureIoError::Extraction {
            patch_id: rec.patch_id.clone(),
            reason: e.to_string(),
        })?;
        if *dim.get_or_insert(crossed.dim()) != crossed.dim() {
            return Err(FeatureIoError::Extraction {
                patch_id: rec.patch_id.clone(),
                reason: "embedding dimension differs from earlier patches".into(),
            });
        }
        rows.push(labeled(rec, crossed.values)?);
    }
    let dim = dim.ok_or(FeatureIoError::Empty)?;
    Ok(FeatureTable {
        names: crossing::feature_names(dim),
        rows,
    })
}

/// Engineered repair-pattern and code-description features for every record.
pub fn engineered_table(corpus: &Corpus) -> Result<FeatureTable, FeatureIoError> {
    let rows = corpus
        .records
        .iter()
        .map(|rec| {
            let v = engineered::extract_all(rec).map_err(|e| FeatureIoError::Extraction {
                patch_id: rec.patch_id.clone(),
                reason: e.to_string(),
            })?;
            labeled(rec, v.values)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(FeatureIoError::Empty);
    }
    Ok(FeatureTable {
        names: engineered::feature_names(),
        rows,
    })
}

/// Sidecar path holding a CSV artifact's metadata: `x.csv` -> `x.csv.meta.json`.
pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), FeatureIoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
