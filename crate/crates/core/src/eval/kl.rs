//! Per-class divergence between the annotated pool and the test set, measured
//! on a shared k-means partition of the test embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlConfig {
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_clusters() -> usize {
    20
}
fn default_max_iterations() -> usize {
    100
}

impl Default for KlConfig {
    fn default() -> Self {
        Self { clusters: default_clusters(), max_iterations: default_max_iterations() }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn assign_clusters(points: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centroids)).collect()
}

/// Lloyd's algorithm from a seeded k-means++ start. Returns the centroids.
pub fn kmeans(points: &[&[f64]], clusters: usize, max_iterations: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if clusters == 0 || clusters > points.len() {
        return Err(Error::DegenerateClustering { clusters, points: points.len() });
    }
    let mut r = rng::stream(seed, "kmeans");
    let mut centroids: Vec<Vec<f64>> = vec![points[r.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < clusters {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = r.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            r.random_range(0..points.len())
        };
        centroids.push(points[next].to_vec());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }

    let dim = points[0].len();
    let mut assignment = assign_clusters(points, &centroids);
    for _ in 0..max_iterations {
        let mut sums = vec![vec![0.0; dim]; clusters];
        let mut sizes = vec![0usize; clusters];
        for (p, &a) in points.iter().zip(&assignment) {
            sizes[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.iter().zip(&sizes)) {
            // Empty clusters keep their previous centroid.
            if n > 0 {
                *c = sum.iter().map(|s| s / n as f64).collect();
            }
        }
        let next = assign_clusters(points, &centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(centroids)
}

fn smoothed_histogram(assignments: impl Iterator<Item = usize>, clusters: usize) -> Vec<f64> {
    let mut h = vec![1.0; clusters];
    for a in assignments {
        h[a] += 1.0;
    }
    let total: f64 = h.iter().sum();
    h.iter().map(|c| c / total).collect()
}

/// `KL(annotated_j ‖ test_j)` for every class `j`, over add-one-smoothed
/// histograms of k-means cluster memberships fitted on the test embeddings.
pub fn kl_conditional_diagnostic(
    annotated: &LabeledDataset,
    test: &LabeledDataset,
    config: &KlConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let classes = test.class_count();
    if annotated.class_count() != classes {
        return Err(Error::MissingClass(annotated.class_count().min(classes)));
    }
    for j in 0..classes {
        if annotated.counts()[j] == 0 || test.counts()[j] == 0 {
            return Err(Error::MissingClass(j));
        }
    }
    if let (Some(a), Some(t)) = (annotated.dimension(), test.dimension()) {
        if a != t {
            return Err(Error::DimensionMismatch { expected: t, found: a });
        }
    }
    let test_points: Vec<&[f64]> = test.examples().iter().map(|e| e.embedding()).collect::<Result<_>>()?;
    let ann_points: Vec<&[f64]> = annotated.examples().iter().map(|e| e.embedding()).collect::<Result<_>>()?;
    let centroids = kmeans(&test_points, config.clusters, config.max_iterations, seed)?;
    let test_assign = assign_clusters(&test_points, &centroids);
    let ann_assign = assign_clusters(&ann_points, &centroids);

    Ok((0..classes)
        .map(|j| {
            let p = smoothed_histogram(
                annotated.examples().iter().zip(&ann_assign).filter(|(e, _)| e.label == j).map(|(_, &a)| a),
                config.clusters,
            );
            let q = smoothed_histogram(
                test.examples().iter().zip(&test_assign).filter(|(e, _)| e.label == j).map(|(_, &a)| a),
                config.clusters,
            );
            p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).sum::<f64>().max(0.0)
        })
        .collect())
}
