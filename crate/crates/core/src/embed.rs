//! Fragment embeddings.
//!
//! Two providers produce [`EmbeddingPair`]s: the built-in paragraph-vector
//! model (distributed bag of words trained with negative sampling) and
//! externally computed vectors imported from JSONL. The similarity
//! primitives used by crossing and filtering live here as well.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty vocabulary (need at least 2 distinct tokens with count >= {min_count})")]
    EmptyVocabulary { min_count: usize },
    #[error("dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("non-finite training loss at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("patch `{patch_id}`: {reason}")]
    InvalidPair { patch_id: String, reason: String },
    #[error("no embeddings in {0}")]
    NoEmbeddings(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn check_len(a: &[f64], b: &[f64]) -> Result<(), EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity plus a flag that is set when either vector has zero
/// norm (the similarity is then reported as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_flagged(a: &[f64], b: &[f64]) -> Result<Cosine, EmbedError> {
    check_len(a, b)?;
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    if zero(a) || zero(b) {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    // Rescale by the largest magnitude to keep the products in range, then use
    // sqrt(|a|^2 |b|^2) so that identical vectors give exactly 1.
    let unit = |v: &[f64]| {
        let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v.iter().map(|x| x / m).collect::<Vec<_>>()
    };
    let (a, b) = (unit(a), unit(b));
    Ok(Cosine {
        value: (dot(&a, &b) / (dot(&a, &a) * dot(&b, &b)).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    cosine_flagged(a, b).map(|c| c.value)
}

/// `1 / (1 + ||a - b||)`, in (0, 1].
pub fn euclidean_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    check_len(a, b)?;
    let dist = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(1.0 / (1.0 + dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub patch_id: String,
    pub buggy_vec: Vec<f64>,
    pub patched_vec: Vec<f64>,
    pub provider: String,
}

impl EmbeddingPair {
    pub fn new(
        patch_id: impl Into<String>,
        buggy_vec: Vec<f64>,
        patched_vec: Vec<f64>,
        provider: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        let pair = EmbeddingPair {
            patch_id: patch_id.into(),
            buggy_vec,
            patched_vec,
            provider: provider.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn dim(&self) -> usize {
        self.buggy_vec.len()
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let invalid = |reason: String| EmbedError::InvalidPair {
            patch_id: self.patch_id.clone(),
            reason,
        };
        if self.buggy_vec.is_empty() {
            return Err(invalid("empty vectors".into()));
        }
        if self.buggy_vec.len() != self.patched_vec.len() {
            return Err(invalid(format!(
                "buggy_vec has {} values, patched_vec has {}",
                self.buggy_vec.len(),
                self.patched_vec.len()
            )));
        }
        if self
            .buggy_vec
            .iter()
            .chain(&self.patched_vec)
            .any(|v| !v.is_finite())
        {
            return Err(invalid("non-finite value".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingLine {
    patch_id: String,
    buggy_vec: Vec<f64>,
    patched_vec: Vec<f64>,
}

/// Reads `{patch_id, buggy_vec, patched_vec}` lines. The dimension is taken
/// from the first record and enforced on the rest.
pub fn import_embeddings(path: &Path, provider: &str) -> Result<Vec<EmbeddingPair>, EmbedError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs: Vec<EmbeddingPair> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingLine = serde_json::from_str(&line).map_err(|e| EmbedError::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let pair = EmbeddingPair {
            patch_id: rec.patch_id,
            buggy_vec: rec.buggy_vec,
            patched_vec: rec.patched_vec,
            provider: provider.to_string(),
        };
        pair.validate()?;
        if let Some(first) = pairs.first() {
            if pair.dim() != first.dim() {
                let reason = format!("dimension {} differs from {}", pair.dim(), first.dim());
                return Err(EmbedError::InvalidPair {
                    patch_id: pair.patch_id,
                    reason,
                });
            }
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(EmbedError::NoEmbeddings(path.display().to_string()));
    }
    Ok(pairs)
}

pub fn export_embeddings(path: &Path, pairs: &[EmbeddingPair]) -> Result<(), EmbedError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        let line = EmbeddingLine {
            patch_id: p.patch_id.clone(),
            buggy_vec: p.buggy_vec.clone(),
            patched_vec: p.patched_vec.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negative_samples: usize,
    pub learning_rate: f64,
    pub min_token_count: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            dim: 64,
            epochs: 100,
            negative_samples: 5,
            learning_rate: 0.025,
            min_token_count: 1,
            seed: 1,
        }
    }
}

/// A trained paragraph-vector model. `word_matrix` holds the output token
/// vectors that document vectors are scored against; `doc_vectors` are the
/// trained vectors of the training documents, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphVectorModel {
    pub config: EmbedderConfig,
    pub vocabulary: BTreeMap<String, usize>,
    pub counts: Vec<u64>,
    pub word_matrix: Vec<Vec<f64>>,
    pub doc_vectors: Vec<Vec<f64>>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Result of inferring a vector; `all_oov` is set when no token was in the
/// vocabulary and the zero vector was returned.
#[derive(Debug, Clone, PartialEq)]
pub struct Inferred {
    pub vector: Vec<f64>,
    pub all_oov: bool,
}

/// Draws negatives from the unigram distribution raised to 0.75.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseTable { cumulative }
    }

    fn sample(&self, rng: &mut rng::Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let r = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= r)
            .min(self.cumulative.len() - 1)
    }
}

/// Scores `doc` against one output vector. Adds the document's gradient
/// step to `doc_step` and returns (loss, scaled gradient) so the caller can
/// update the output vector when training.
fn pair_step(
    doc: &[f64],
    word: &[f64],
    positive: bool,
    lr: f64,
    doc_step: &mut [f64],
) -> (f64, f64) {
    let z = dot(doc, word);
    let label = if positive { 1.0 } else { 0.0 };
    let loss = crate::nn::bce_with_logit(z, label);
    let g = lr * (label - crate::nn::sigmoid(z));
    for (s, x) in doc_step.iter_mut().zip(word) {
        *s += g * x;
    }
    (loss, g)
}

impl ParagraphVectorModel {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn indices(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .filter_map(|t| self.vocabulary.get(t).copied())
            .collect()
    }

    /// Infers a vector for an unseen document against the frozen output
    /// matrix. The starting point and negative draws are seeded from the
    /// model's seed, so the same tokens always give the same vector.
    pub fn infer_vector(&self, tokens: &[String]) -> Inferred {
        let n = self.config.dim;
        let idx = self.indices(tokens);
        if idx.is_empty() {
            return Inferred {
                vector: vec![0.0; n],
                all_oov: true,
            };
        }
        let mut rng = rng::seeded(rng::derive(self.config.seed, u64::MAX));
        let mut doc: Vec<f64> = (0..n)
            .map(|_| (rng.gen::<f64>() - 0.5) / n as f64)
            .collect();
        let noise = NoiseTable::new(&self.counts);
        let epochs = self.config.epochs.max(1);
        let mut negatives = vec![0; self.config.negative_samples];
        for epoch in 0..epochs {
            let lr = decayed_lr(self.config.learning_rate, epoch, epochs);
            for &t in &idx {
                for neg in negatives.iter_mut() {
                    *neg = noise.sample(&mut rng);
                }
                let mut step = vec![0.0; n];
                for (j, &w) in std::iter::once(&t).chain(&negatives).enumerate() {
                    pair_step(&doc, &self.word_matrix[w], j == 0, lr, &mut step);
                }
                for (d, s) in doc.iter_mut().zip(&step) {
                    *d += s;
                }
            }
        }
        Inferred {
            vector: doc,
            all_oov: false,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

fn decayed_lr(lr: f64, epoch: usize, epochs: usize) -> f64 {
    let floor = lr * 1e-4;
    (lr * (1.0 - epoch as f64 / epochs as f64)).max(floor)
}

/// Trains document and output-token vectors with the distributed
/// bag-of-words objective: each document vector learns to score its own
/// tokens above tokens drawn from the noise distribution.
pub fn train_embedder(
    documents: &[Vec<String>],
    config: &EmbedderConfig,
) -> Result<ParagraphVectorModel, EmbedError> {
    if config.dim < 2 {
        return Err(EmbedError::BadDimension(config.dim));
    }
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for doc in documents {
        for t in doc {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let kept: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|&(_, c)| c as usize >= config.min_token_count.max(1))
        .collect();
    if kept.len() < 2 {
        return Err(EmbedError::EmptyVocabulary {
            min_count: config.min_token_count,
        });
    }
    let vocabulary: BTreeMap<String, usize> = kept
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (t.to_string(), i))
        .collect();
    let counts: Vec<u64> = kept.iter().map(|&(_, c)| c).collect();
    let lookup: HashMap<&str, usize> = kept.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let docs: Vec<Vec<usize>> = documents
        .iter()
        .map(|d| {
            d.iter()
                .filter_map(|t| lookup.get(t.as_str()).copied())
                .collect()
        })
        .collect();

    let n = config.dim;
    let mut rng = rng::seeded(config.seed);
    let mut doc_vectors: Vec<Vec<f64>> = docs
        .iter()
        .map(|_| {
            (0..n)
                .map(|_| (rng.gen::<f64>() - 0.5) / n as f64)
                .collect()
        })
        .collect();
    // Small random output vectors rather than zeros so the first epoch already
    // moves document vectors apart.
    let mut word_matrix: Vec<Vec<f64>> = counts
        .iter()
        .map(|_| {
            (0..n)
                .map(|_| (rng.gen::<f64>() - 0.5) / n as f64)
                .collect()
        })
        .collect();
    let noise = NoiseTable::new(&counts);
    let epochs = config.epochs.max(1);
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut negatives = vec![0; config.negative_samples];
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for epoch in 0..epochs {
        let lr = decayed_lr(config.learning_rate, epoch, epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for &d in &order {
            for &t in &docs[d] {
                for neg in negatives.iter_mut() {
                    *neg = noise.sample(&mut rng);
                }
                let mut step = vec![0.0; n];
                for (j, &w) in std::iter::once(&t).chain(&negatives).enumerate() {
                    let (loss, g) =
                        pair_step(&doc_vectors[d], &word_matrix[w], j == 0, lr, &mut step);
                    total += loss;
                    for (x, dv) in word_matrix[w].iter_mut().zip(&doc_vectors[d]) {
                        *x += g * dv;
                    }
                }
                for (x, s) in doc_vectors[d].iter_mut().zip(&step) {
                    *x += s;
                }
                steps += 1;
            }
        }
        let avg = if steps == 0 {
            0.0
        } else {
            total / steps as f64
        };
        let diverged = doc_vectors
            .iter()
            .chain(&word_matrix)
            .flatten()
            .any(|v| !v.is_finite());
        if !avg.is_finite() || diverged {
            return Err(EmbedError::NonFiniteLoss { epoch });
        }
        if epoch == 0 {
            initial_loss = avg;
        }
        final_loss = avg;
    }
    Ok(ParagraphVectorModel {
        config: config.clone(),
        vocabulary,
        counts,
        word_matrix,
        doc_vectors,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_norm_cosine_is_flagged_zero() {
        let c = cosine_flagged(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.degenerate);
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(
            euclidean_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap(),
            1.0
        );
        let s = euclidean_similarity(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((s - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(euclidean_similarity(&[1.0], &[0.0]).unwrap(), 0.5);
        assert!(euclidean_similarity(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(v in proptest::collection::vec(-10.0f64..10.0, 1..16), c in 0.01f64..100.0) {
            prop_assume!(norm(&v) > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((cosine(&v, &scaled).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn euclidean_symmetric_and_maximal_only_on_equality(
            a in proptest::collection::vec(-5.0f64..5.0, 4),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let ab = euclidean_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, euclidean_similarity(&b, &a).unwrap());
            prop_assert!(ab > 0.0 && ab <= 1.0);
            prop_assert_eq!(ab == 1.0, a == b);
        }
    }

    #[test]
    fn disjoint_documents_are_not_self_similar() {
        let docs = vec![doc("alpha beta gamma delta"), doc("one two three four")];
        let cfg = EmbedderConfig {
            dim: 4,
            epochs: 50,
            seed: 1,
            ..Default::default()
        };
        let m = train_embedder(&docs, &cfg).unwrap();
        let d0 = &m.doc_vectors[0];
        let d1 = &m.doc_vectors[1];
        assert!(cosine(d0, d1).unwrap() < cosine(d0, d0).unwrap());
        assert!((cosine(d0, d0).unwrap() - 1.0).abs() < 1e-12);
        assert!(m.final_loss <= m.initial_loss);
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(
            train_embedder(&[], &EmbedderConfig::default()),
            Err(EmbedError::EmptyVocabulary { .. })
        ));
        assert!(matches!(
            train_embedder(
                &[doc("a b")],
                &EmbedderConfig {
                    dim: 1,
                    ..Default::default()
                }
            ),
            Err(EmbedError::BadDimension(1))
        ));
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let docs = vec![doc("a b c a b c"), doc("d e f d e f")];
        let cfg = EmbedderConfig {
            dim: 8,
            epochs: 30,
            learning_rate: 1e200,
            ..Default::default()
        };
        assert!(matches!(
            train_embedder(&docs, &cfg),
            Err(EmbedError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn inference_is_deterministic_and_handles_oov() {
        let docs = vec![doc("if ( x ) return ;"), doc("a = b + c ;")];
        let m = train_embedder(
            &docs,
            &EmbedderConfig {
                dim: 8,
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let a = m.infer_vector(&docs[0]);
        let b = m.infer_vector(&docs[0]);
        assert_eq!(a, b);
        assert!(!a.all_oov);
        let empty = m.infer_vector(&[]);
        assert!(empty.all_oov);
        assert_eq!(empty.vector, vec![0.0; 8]);
        assert!(m.infer_vector(&doc("unseen tokens")).all_oov);
    }

    #[test]
    fn training_is_deterministic() {
        let docs = vec![doc("a b c"), doc("c d e"), doc("e f a")];
        let cfg = EmbedderConfig {
            dim: 6,
            epochs: 10,
            ..Default::default()
        };
        assert_eq!(
            train_embedder(&docs, &cfg).unwrap(),
            train_embedder(&docs, &cfg).unwrap()
        );
    }

    #[test]
    fn import_validates_dimensions() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"patch_id":"p1","buggy_vec":[1,2,3,4],"patched_vec":[1,2,3,5]}}"#
        )
        .unwrap();
        writeln!(
            f,
            r#"{{"patch_id":"p2","buggy_vec":[0,0,0,1],"patched_vec":[1,0,0,0]}}"#
        )
        .unwrap();
        let pairs = import_embeddings(f.path(), "ext").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].dim(), 4);

        writeln!(
            f,
            r#"{{"patch_id":"p3","buggy_vec":[1,2,3,4,5],"patched_vec":[1,2,3,4,5]}}"#
        )
        .unwrap();
        match import_embeddings(f.path(), "ext") {
            Err(EmbedError::InvalidPair { patch_id, .. }) => assert_eq!(patch_id, "p3"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn import_rejects_non_numeric() {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"patch_id":"p1","buggy_vec":[1,"x"],"patched_vec":[1,2]}}"#
        )
        .unwrap();
        assert!(matches!(
            import_embeddings(f.path(), "ext"),
            Err(EmbedError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn export_then_import_round_trips() {
        let pairs = vec![
            EmbeddingPair::new("a", vec![0.1, -2.5], vec![3.0, 1e-9], "ext").unwrap(),
            EmbeddingPair::new("b", vec![0.0, 0.0], vec![1.0, 1.0], "ext").unwrap(),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        export_embeddings(f.path(), &pairs).unwrap();
        assert_eq!(import_embeddings(f.path(), "ext").unwrap(), pairs);
    }
}
