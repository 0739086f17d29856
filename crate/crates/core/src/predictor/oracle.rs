//! Desk-scale stand-in for a language model: a Bayes classifier whose prior
//! and class-conditional densities are estimated from the demonstrations.

use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Laplace smoothing λ on the demonstration label counts.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// KDE bandwidth as a multiple of the median pairwise demo distance.
    #[serde(default = "default_bandwidth_factor")]
    pub bandwidth_factor: f64,
}

fn default_smoothing() -> f64 {
    1.0
}
fn default_bandwidth_factor() -> f64 {
    0.5
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { smoothing: default_smoothing(), bandwidth_factor: default_bandwidth_factor() }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    classes: usize,
    config: OracleConfig,
}

impl SyntheticOracle {
    pub fn new(classes: usize, config: OracleConfig) -> Self {
        Self { classes, config }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `argmax_y P̂(x|y)·P̂(y)`, lowest label on ties.
    pub fn predict_label(&self, demos: &[&Example], query: &Example) -> Result<usize> {
        let scores = self.log_posteriors(demos, query)?;
        let mut best = 0;
        for (y, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = y;
            }
        }
        Ok(best)
    }

    /// `ln((count_y + λ)/(K + kλ))` for each class over the demo labels.
    pub fn log_prior(&self, labels: &[usize]) -> Vec<f64> {
        let lambda = self.config.smoothing;
        let denom = labels.len() as f64 + self.classes as f64 * lambda;
        (0..self.classes)
            .map(|y| ((labels.iter().filter(|&&l| l == y).count() as f64 + lambda) / denom).ln())
            .collect()
    }

    /// Unnormalized log posterior per class.
    pub fn log_posteriors(&self, demos: &[&Example], query: &Example) -> Result<Vec<f64>> {
        if demos.is_empty() {
            return Err(Error::EmptyDemos);
        }
        let x = query.embedding()?;
        let mut per_class: Vec<Vec<&[f64]>> = vec![Vec::new(); self.classes];
        for d in demos {
            if d.label >= self.classes {
                return Err(Error::LabelOutOfRange { label: d.label, classes: self.classes });
            }
            let e = d.embedding()?;
            if e.len() != x.len() {
                return Err(Error::DimensionMismatch { expected: x.len(), found: e.len() });
            }
            per_class[d.label].push(e);
        }
        let all: Vec<&[f64]> = demos.iter().map(|d| d.embedding()).collect::<Result<_>>()?;
        let h = self.config.bandwidth_factor * reference_distance(&all, x);
        let two_h2 = 2.0 * h * h;

        let labels: Vec<usize> = demos.iter().map(|d| d.label).collect();
        let priors = self.log_prior(&labels);
        Ok(per_class
            .iter()
            .zip(priors)
            .map(|(members, prior)| {
                let likelihood = if members.is_empty() {
                    // Density of a point two bandwidths from a kernel centre.
                    -2.0
                } else {
                    let terms: Vec<f64> = members.iter().map(|m| -sq_dist(m, x) / two_h2).collect();
                    log_sum_exp(&terms) - (members.len() as f64).ln()
                };
                prior + likelihood
            })
            .collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median pairwise demo distance. Falls back to the median query-to-demo
/// distance, then to 1, when every demo coincides.
fn reference_distance(demos: &[&[f64]], query: &[f64]) -> f64 {
    let mut pairs = Vec::with_capacity(demos.len() * demos.len().saturating_sub(1) / 2);
    for i in 0..demos.len() {
        for j in i + 1..demos.len() {
            pairs.push(sq_dist(demos[i], demos[j]).sqrt());
        }
    }
    if let Some(m) = median(pairs).filter(|m| *m > 0.0) {
        return m;
    }
    median(demos.iter().map(|d| sq_dist(d, query).sqrt()).collect())
        .filter(|m| *m > 0.0)
        .unwrap_or(1.0)
}
