//! Demonstration scoring and selection.
//!
//! All scores are higher-is-better. Rankings sort by score descending and
//! break ties by ascending example id, so every selection is reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{Example, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::weights::{combined_weights, ClassWeightVector};

/// Default size of the oversized candidate pool.
pub const DEFAULT_CANDIDATE_POOL: usize = 1600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scorer {
    Cosine,
    /// Uniform pseudo-random scores, a pure function of `(seed, query, example)`.
    Random { seed: u64 },
}

impl Scorer {
    pub fn score(&self, candidate: &Example, query: &Example) -> Result<f64> {
        match self {
            Scorer::Cosine => Ok(dot(candidate.embedding()?, query.embedding()?)),
            Scorer::Random { seed } => Ok(rng::unit_interval(rng::hash64(
                *seed,
                &[query.id.as_bytes(), candidate.id.as_bytes()],
            ))),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position of the example in the dataset it was scored from.
    pub index: usize,
    pub id: String,
    pub label: usize,
    pub base_score: f64,
    pub adjusted_score: f64,
}

/// Candidates for one query, sorted by adjusted score descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub query_id: String,
    pub entries: Vec<Candidate>,
}

impl RankedCandidates {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|c| c.id.as_str()).collect()
    }

    /// Per-class number of entries.
    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for c in &self.entries {
            h[c.label] += 1;
        }
        h
    }

    /// Entries in the order they are placed into the prompt.
    pub fn prompt_sequence(&self, order: PromptOrder) -> Vec<&Candidate> {
        match order {
            PromptOrder::Ascending => self.entries.iter().rev().collect(),
            PromptOrder::Descending => self.entries.iter().collect(),
        }
    }
}

/// Arrangement of the chosen demonstrations inside the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    /// Weakest first, so the strongest sits next to the query.
    #[default]
    Ascending,
    Descending,
}

fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.adjusted_score
        .partial_cmp(&a.adjusted_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

/// Keep the `k` best candidates under [`rank_order`], sorted.
fn keep_best(mut entries: Vec<Candidate>, k: usize) -> Vec<Candidate> {
    if k < entries.len() {
        if k > 0 {
            entries.select_nth_unstable_by(k - 1, rank_order);
        }
        entries.truncate(k);
    }
    entries.sort_by(rank_order);
    entries
}

fn score_all(ds: &LabeledDataset, query: &Example, scorer: &Scorer) -> Result<Vec<Candidate>> {
    if matches!(scorer, Scorer::Cosine) {
        query.embedding()?;
    }
    ds.examples()
        .iter()
        .enumerate()
        .map(|(index, ex)| {
            let s = scorer.score(ex, query)?;
            Ok(Candidate { index, id: ex.id.clone(), label: ex.label, base_score: s, adjusted_score: s })
        })
        .collect()
}

fn ensure_fits(requested: usize, available: usize) -> Result<()> {
    if requested > available {
        return Err(Error::KTooLarge { requested, available });
    }
    Ok(())
}

/// The `k` highest-scoring examples of `ds` for `query`.
pub fn top_k(ds: &LabeledDataset, query: &Example, scorer: &Scorer, k: usize) -> Result<RankedCandidates> {
    ensure_fits(k, ds.len())?;
    let entries = keep_best(score_all(ds, query, scorer)?, k);
    Ok(RankedCandidates { query_id: query.id.clone(), entries })
}

/// Oversized pre-selection of `pool_size` candidates by base score.
pub fn candidate_pool(
    ds: &LabeledDataset,
    query: &Example,
    scorer: &Scorer,
    pool_size: usize,
) -> Result<RankedCandidates> {
    top_k(ds, query, scorer, pool_size)
}

/// Rescore `pool` by `(w_y + β_y)·s` and keep the `k` best.
pub fn reweighted_select(
    pool: &RankedCandidates,
    w: &ClassWeightVector,
    beta: Option<&[f64]>,
    k: usize,
) -> Result<RankedCandidates> {
    let combined = combined_weights(w, beta)?;
    reweight_with(pool, &combined, k)
}

/// [`reweighted_select`] with the combined weight vector already formed and validated.
pub fn reweight_with(pool: &RankedCandidates, combined: &[f64], k: usize) -> Result<RankedCandidates> {
    ensure_fits(k, pool.len())?;
    let entries = pool
        .entries
        .iter()
        .map(|c| Candidate { adjusted_score: combined[c.label] * c.base_score, ..c.clone() })
        .collect();
    Ok(RankedCandidates { query_id: pool.query_id.clone(), entries: keep_best(entries, k) })
}

/// Per-class quotas for `k` demonstrations over `classes` classes: `k / classes`
/// each, the remainder going to the classes whose best candidate scores highest.
pub fn stratified_quotas(best_per_class: &[Option<f64>], k: usize) -> Vec<usize> {
    let classes = best_per_class.len();
    let mut quotas = vec![k / classes; classes];
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| {
        let sa = best_per_class[a].unwrap_or(f64::NEG_INFINITY);
        let sb = best_per_class[b].unwrap_or(f64::NEG_INFINITY);
        sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    for &class in order.iter().take(k % classes) {
        quotas[class] += 1;
    }
    quotas
}

/// The top `quota_j` examples of every class, merged into one ranking.
pub fn stratified_select(ds: &LabeledDataset, query: &Example, scorer: &Scorer, k: usize) -> Result<RankedCandidates> {
    let scored = score_all(ds, query, scorer)?;
    let mut by_class: Vec<Vec<Candidate>> = vec![Vec::new(); ds.class_count()];
    for c in scored {
        by_class[c.label].push(c);
    }
    let best: Vec<Option<f64>> = by_class
        .iter()
        .map(|members| members.iter().min_by(|a, b| rank_order(a, b)).map(|c| c.base_score))
        .collect();
    let quotas = stratified_quotas(&best, k);
    let mut entries = Vec::with_capacity(k);
    for (members, quota) in by_class.into_iter().zip(quotas) {
        ensure_fits(quota, members.len())?;
        entries.extend(keep_best(members, quota));
    }
    entries.sort_by(rank_order);
    Ok(RankedCandidates { query_id: query.id.clone(), entries })
}

/// Repeat tail-class examples cyclically until every class has `max_j n_j`.
/// Replicas get ids `"{id}#r{replica}"`.
pub fn oversample(ds: &LabeledDataset) -> LabeledDataset {
    let target = ds.counts().iter().copied().max().unwrap_or(0);
    let mut examples: Vec<Example> = ds.examples().to_vec();
    for members in ds.class_indices() {
        if members.is_empty() {
            continue;
        }
        for extra in 0..target - members.len() {
            let src = ds.get(members[extra % members.len()]);
            let replica = extra / members.len() + 1;
            examples.push(Example { id: format!("{}#r{replica}", src.id), ..src.clone() });
        }
    }
    LabeledDataset::from_parts(examples, ds.label_names().to_vec())
}

/// Uniformly drop head-class examples until every class has `min_j n_j`.
pub fn undersample(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let target = ds.counts().iter().copied().filter(|&n| n > 0).min().unwrap_or(0);
    let mut keep = Vec::with_capacity(target * ds.class_count());
    for (class, members) in ds.class_indices().iter().enumerate() {
        let mut r = rng::stream(seed, &format!("undersample/class-{class}"));
        let take = target.min(members.len());
        keep.extend(rand::seq::index::sample(&mut r, members.len(), take).into_iter().map(|i| members[i]));
    }
    keep.sort_unstable();
    ds.select(&keep)
}
