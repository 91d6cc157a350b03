//! Crossing of a buggy/patched embedding pair into one learned feature vector.
//!
//! Layout, for fragment embeddings of dimension `n`:
//!
//! | range          | content                          |
//! |----------------|----------------------------------|
//! | `0..n`         | `patched - buggy` (elementwise)  |
//! | `n..2n`        | `patched * buggy` (elementwise)  |
//! | `2n`           | cosine(buggy, patched)           |
//! | `2n + 1`       | euclidean similarity             |
//!
//! Features are named `B-0` .. `B-{2n+1}` in that order.

use serde::{Deserialize, Serialize};

use crate::embed::{self, EmbedError, EmbeddingPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossedVector {
    pub values: Vec<f64>,
    /// Set when one fragment embedding had zero norm and cosine fell back to 0.
    pub degenerate_cosine: bool,
}

impl CrossedVector {
    pub fn dim(&self) -> usize {
        (self.values.len() - 2) / 2
    }

    pub fn sub(&self) -> &[f64] {
        &self.values[..self.dim()]
    }

    pub fn mul(&self) -> &[f64] {
        let n = self.dim();
        &self.values[n..2 * n]
    }

    pub fn cosine(&self) -> f64 {
        self.values[2 * self.dim()]
    }

    pub fn euclidean(&self) -> f64 {
        self.values[2 * self.dim() + 1]
    }
}

pub fn crossed_len(n: usize) -> usize {
    2 * n + 2
}

pub fn feature_names(n: usize) -> Vec<String> {
    (0..crossed_len(n)).map(|i| format!("B-{i}")).collect()
}

pub fn cross(pair: &EmbeddingPair) -> Result<CrossedVector, EmbedError> {
    pair.validate()?;
    let (b, p) = (&pair.buggy_vec, &pair.patched_vec);
    let n = b.len();
    let mut values = Vec::with_capacity(crossed_len(n));
    values.extend(p.iter().zip(b).map(|(p, b)| p - b));
    values.extend(p.iter().zip(b).map(|(p, b)| p * b));
    let cos = embed::cosine_flagged(b, p)?;
    values.push(cos.value);
    values.push(embed::euclidean_similarity(b, p)?);
    Ok(CrossedVector {
        values,
        degenerate_cosine: cos.degenerate,
    })
}
