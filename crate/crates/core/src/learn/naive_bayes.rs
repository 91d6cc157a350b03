//! Gaussian naive Bayes with a variance floor.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NaiveBayesConfig {
    /// Fraction of the largest feature variance added to every variance.
    pub var_smoothing: f64,
}

impl Default for NaiveBayesConfig {
    fn default() -> Self {
        NaiveBayesConfig {
            var_smoothing: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub log_prior: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// Index 0 = incorrect, 1 = correct.
    pub classes: [ClassStats; 2],
}

impl ClassStats {
    fn log_likelihood(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.log_prior
            + x.iter()
                .zip(&self.mean)
                .zip(&self.var)
                .map(|((v, m), s2)| -0.5 * (ln_2pi + s2.ln() + (v - m) * (v - m) / s2))
                .sum::<f64>()
    }
}

impl NaiveBayesModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let l0 = self.classes[0].log_likelihood(x);
        let l1 = self.classes[1].log_likelihood(x);
        crate::nn::sigmoid(l1 - l0)
    }
}

pub fn fit(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    config: &NaiveBayesConfig,
) -> NaiveBayesModel {
    let p = x[0].len();
    let total: f64 = weights.iter().sum();
    // Floor from the overall per-feature variance.
    let mut overall_mean = vec![0.0; p];
    for (row, w) in x.iter().zip(weights) {
        for (m, v) in overall_mean.iter_mut().zip(row) {
            *m += w * v / total;
        }
    }
    let mut max_var: f64 = 0.0;
    for j in 0..p {
        let var = x
            .iter()
            .zip(weights)
            .map(|(r, w)| w * (r[j] - overall_mean[j]).powi(2))
            .sum::<f64>()
            / total;
        max_var = max_var.max(var);
    }
    let floor = config.var_smoothing * max_var + 1e-12;

    let class = |c: f64| {
        let members: Vec<(&Vec<f64>, f64)> = x
            .iter()
            .zip(y)
            .zip(weights)
            .filter(|((_, &t), _)| t == c)
            .map(|((r, _), &w)| (r, w))
            .collect();
        let wsum: f64 = members.iter().map(|(_, w)| w).sum();
        let mut mean = vec![0.0; p];
        for (r, w) in &members {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += w * v / wsum;
            }
        }
        let mut var = vec![floor; p];
        for (r, w) in &members {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += w * (v - m) * (v - m) / wsum;
            }
        }
        ClassStats {
            log_prior: (wsum / total).ln(),
            mean,
            var,
        }
    };
    NaiveBayesModel {
        classes: [class(0.0), class(1.0)],
    }
}
