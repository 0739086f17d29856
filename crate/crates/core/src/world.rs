//! Synthetic Gaussian class world used for desk-scale experiments.
//!
//! Class `j` has mean `(separation/√2)·e_j`, so any two means are
//! `separation` apart, and isotropic noise `σ`. Embeddings are L2-normalized
//! after sampling so that cosine scoring applies.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Example, LabeledDataset};
use crate::encoder::normalize;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianWorld {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_classes() -> usize {
    4
}
fn default_dimension() -> usize {
    8
}
fn default_sigma() -> f64 {
    0.3
}
fn default_separation() -> f64 {
    1.0
}

impl Default for GaussianWorld {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            dimension: default_dimension(),
            sigma: default_sigma(),
            separation: default_separation(),
        }
    }
}

/// Displacement of one class's mean, used to inject a conditional shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShift {
    pub class: usize,
    /// Length of the displacement along the first axis not used by any class mean.
    pub magnitude: f64,
}

impl GaussianWorld {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dimension < self.classes {
            return Err(Error::Config(format!(
                "world needs 2 <= classes <= dimension, got {} classes in {} dimensions",
                self.classes, self.dimension
            )));
        }
        if !(self.sigma > 0.0 && self.separation > 0.0) {
            return Err(Error::Config("world sigma and separation must be positive".into()));
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c}")).collect()
    }

    pub fn mean(&self, class: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dimension];
        m[class] = self.separation / std::f64::consts::SQRT_2;
        m
    }

    /// `counts[j]` points of class `j`, ids `"{tag}-{j}-{i}"`.
    pub fn sample(&self, counts: &[usize], seed: u64, tag: &str) -> Result<LabeledDataset> {
        self.sample_shifted(counts, seed, tag, None)
    }

    pub fn sample_shifted(
        &self,
        counts: &[usize],
        seed: u64,
        tag: &str,
        shift: Option<&MeanShift>,
    ) -> Result<LabeledDataset> {
        self.validate()?;
        if counts.len() != self.classes {
            return Err(Error::InvalidCounts(format!("{} counts for {} classes", counts.len(), self.classes)));
        }
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut examples = Vec::with_capacity(counts.iter().sum());
        for (class, &n) in counts.iter().enumerate() {
            let mut centre = self.mean(class);
            if let Some(s) = shift.filter(|s| s.class == class) {
                let axis = self.classes.min(self.dimension - 1);
                centre[axis] += s.magnitude;
            }
            let mut r = rng::stream(seed, &format!("world/{tag}/class-{class}"));
            for i in 0..n {
                let v: Vec<f64> = centre.iter().map(|m| m + noise.sample(&mut r)).collect();
                let id = format!("{tag}-{class}-{i:05}");
                examples.push(Example::new(id.clone(), format!("point {id}"), class).with_embedding(normalize(v)));
            }
        }
        LabeledDataset::new(examples, self.label_names())
    }

    /// Nearest class mean of a normalized embedding (by cosine).
    pub fn nearest_mean(&self, embedding: &[f64]) -> usize {
        (0..self.classes)
            .max_by(|&a, &b| embedding[a].total_cmp(&embedding[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }
}
