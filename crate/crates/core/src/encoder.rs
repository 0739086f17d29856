//! Embedding providers.
//!
//! Every vector leaving this module is L2-normalized, so cosine similarity
//! between two embeddings is their dot product.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::http::{HttpEndpoint, RetryPolicy};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    /// Use the embeddings stored in the dataset files.
    Precomputed,
    SyntheticHash {
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        base_url: String,
        dimension: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_concurrency")]
        max_concurrency: usize,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_batch() -> usize {
    64
}

fn default_concurrency() -> usize {
    4
}

pub enum EmbeddingProvider {
    /// Text → stored vector table.
    Precomputed { dimension: usize, table: HashMap<String, Vec<f64>> },
    SyntheticHash { dimension: usize, seed: u64 },
    Http { endpoint: HttpEndpoint, dimension: usize, batch_size: usize },
}

impl EmbeddingProvider {
    pub fn synthetic(dimension: usize, seed: u64) -> Self {
        EmbeddingProvider::SyntheticHash { dimension, seed }
    }

    /// Table provider over stored vectors; every vector must have `dimension` entries.
    pub fn precomputed(
        dimension: usize,
        entries: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut table = HashMap::new();
        for (text, v) in entries {
            if v.len() != dimension {
                return Err(Error::DimensionMismatch { expected: dimension, found: v.len() });
            }
            table.insert(text, v);
        }
        Ok(EmbeddingProvider::Precomputed { dimension, table })
    }

    /// Table provider built from the stored embeddings of a dataset.
    pub fn from_dataset(ds: &LabeledDataset) -> Result<Self> {
        let dimension = ds.dimension().ok_or_else(|| {
            Error::MissingEmbedding(ds.examples().first().map(|e| e.id.clone()).unwrap_or_default())
        })?;
        let entries = ds
            .examples()
            .iter()
            .map(|e| e.embedding().map(|v| (e.text.clone(), v.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        Self::precomputed(dimension, entries)
    }

    pub fn http(base_url: impl Into<String>, dimension: usize, api_key: Option<String>) -> Self {
        EmbeddingProvider::Http {
            endpoint: HttpEndpoint::new(base_url, api_key, RetryPolicy::default(), default_concurrency()),
            dimension,
            batch_size: default_batch(),
        }
    }

    pub fn from_config(config: &EncoderConfig, precomputed: Option<&LabeledDataset>) -> Result<Self> {
        match config {
            EncoderConfig::Precomputed => {
                let ds = precomputed
                    .ok_or_else(|| Error::Config("precomputed encoder needs embedded datasets".into()))?;
                Self::from_dataset(ds)
            }
            EncoderConfig::SyntheticHash { dimension, seed } => Ok(Self::synthetic(*dimension, *seed)),
            EncoderConfig::Http { base_url, dimension, batch_size, max_concurrency, retry } => {
                Ok(EmbeddingProvider::Http {
                    endpoint: HttpEndpoint::new(
                        base_url.clone(),
                        crate::http::api_key_from_env(),
                        retry.clone(),
                        *max_concurrency,
                    ),
                    dimension: *dimension,
                    batch_size: (*batch_size).max(1),
                })
            }
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::Precomputed { dimension, .. }
            | EmbeddingProvider::SyntheticHash { dimension, .. }
            | EmbeddingProvider::Http { dimension, .. } => *dimension,
        }
    }

    /// One unit vector per input text.
    pub fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::Config("encode called with no texts".into()));
        }
        let raw = match self {
            EmbeddingProvider::Precomputed { table, .. } => texts
                .iter()
                .map(|t| table.get(*t).cloned().ok_or_else(|| Error::MissingEmbedding((*t).to_string())))
                .collect::<Result<Vec<_>>>()?,
            EmbeddingProvider::SyntheticHash { dimension, seed } => {
                texts.iter().map(|t| hash_vector(t, *dimension, *seed)).collect()
            }
            EmbeddingProvider::Http { endpoint, dimension, batch_size } => {
                encode_http(endpoint, texts, *dimension, *batch_size)?
            }
        };
        raw.into_iter()
            .map(|v| {
                if v.len() != self.dimension() {
                    return Err(Error::DimensionMismatch { expected: self.dimension(), found: v.len() });
                }
                Ok(normalize(v))
            })
            .collect()
    }

    /// Embed every example of `ds` from its text.
    pub fn embed_dataset(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        if ds.is_empty() {
            return Ok(ds.clone());
        }
        let texts: Vec<&str> = ds.examples().iter().map(|e| e.text.as_str()).collect();
        ds.with_embeddings(self.encode(&texts)?)
    }
}

/// Seeded pseudo-random unit vector for `text`.
fn hash_vector(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &format!("synthetic-hash/{text}"));
    (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Scale to unit L2 norm. The zero vector maps to the first basis vector.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if !v.is_empty() {
        v.fill(0.0);
        v[0] = 1.0;
    }
    v
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

fn encode_http(endpoint: &HttpEndpoint, texts: &[&str], dimension: usize, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let batches: Vec<&[&str]> = texts.chunks(batch_size).collect();
    let results = endpoint.parallel(&batches, |batch| {
        let resp: EmbedResponse = endpoint
            .post_json("embed", &EmbedRequest { texts: batch })
            .map_err(as_provider_error)?;
        if resp.embeddings.len() != batch.len() {
            return Err(Error::ProviderUnavailable {
                attempts: 1,
                detail: format!("{} embeddings returned for {} texts", resp.embeddings.len(), batch.len()),
            });
        }
        for v in &resp.embeddings {
            if v.len() != dimension {
                return Err(Error::DimensionMismatch { expected: dimension, found: v.len() });
            }
        }
        Ok(resp.embeddings)
    })?;
    Ok(results.into_iter().flatten().collect())
}

fn as_provider_error(e: crate::http::HttpFailure) -> Error {
    Error::ProviderUnavailable { attempts: e.attempts, detail: e.detail }
}
