//! Mean mismatch on the balanced subset as a function of the bias vector.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataset::{Example, LabeledDataset};
use crate::error::{Error, Result};
use crate::predictor::{MismatchMetric, Predictor};
use crate::selection::{candidate_pool, reweight_with, PromptOrder, RankedCandidates, Scorer};
use crate::weights::{combined_weights, ClassWeightVector};

use super::Objective;

/// Bias values closer than this share a cache entry.
const CACHE_RESOLUTION: f64 = 1e-12;

pub struct BiasObjective<'a> {
    remainder: &'a LabeledDataset,
    queries: &'a LabeledDataset,
    /// One oversized candidate pool from `remainder` per query; these do not depend on β.
    pools: Vec<RankedCandidates>,
    weights: ClassWeightVector,
    k: usize,
    predictor: Arc<dyn Predictor>,
    metric: MismatchMetric,
    order: PromptOrder,
    cache: HashMap<Vec<i64>, f64>,
    predictor_calls: AtomicUsize,
}

impl<'a> BiasObjective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        queries: &'a LabeledDataset,
        remainder: &'a LabeledDataset,
        scorer: &Scorer,
        weights: ClassWeightVector,
        k: usize,
        pool_size: usize,
        predictor: Arc<dyn Predictor>,
        metric: MismatchMetric,
    ) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Config("balanced subset is empty".into()));
        }
        let pool_size = pool_size.min(remainder.len());
        let pools = queries
            .examples()
            .par_iter()
            .map(|q| candidate_pool(remainder, q, scorer, pool_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            remainder,
            queries,
            pools,
            weights,
            k,
            predictor,
            metric,
            order: PromptOrder::default(),
            cache: HashMap::new(),
            predictor_calls: AtomicUsize::new(0),
        })
    }

    pub fn with_order(mut self, order: PromptOrder) -> Self {
        self.order = order;
        self
    }

    pub fn weights(&self) -> &ClassWeightVector {
        &self.weights
    }

    /// Number of predictor invocations so far; cache hits make none.
    pub fn predictor_calls(&self) -> usize {
        self.predictor_calls.load(Ordering::Relaxed)
    }

    pub fn evaluate_bias(&mut self, beta: &[f64]) -> Result<f64> {
        let key: Vec<i64> = beta.iter().map(|b| (b / CACHE_RESOLUTION).round() as i64).collect();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let combined = combined_weights(&self.weights, Some(beta))?;
        let per_query = self
            .pools
            .par_iter()
            .zip(self.queries.examples().par_iter())
            .map(|(pool, query)| self.query_mismatch(pool, query, &combined))
            .collect::<Result<Vec<f64>>>()?;
        let value = per_query.iter().sum::<f64>() / per_query.len() as f64;
        self.cache.insert(key, value);
        Ok(value)
    }

    fn query_mismatch(&self, pool: &RankedCandidates, query: &Example, combined: &[f64]) -> Result<f64> {
        let chosen = reweight_with(pool, combined, self.k)?;
        let demos: Vec<&Example> =
            chosen.prompt_sequence(self.order).into_iter().map(|c| self.remainder.get(c.index)).collect();
        self.predictor_calls.fetch_add(1, Ordering::Relaxed);
        let prediction = self
            .predictor
            .predict(&demos, query)
            .map_err(|e| Error::PredictorFailure { query_id: query.id.clone(), source: Box::new(e) })?;
        self.metric.mismatch(&prediction, query)
    }
}

impl Objective for BiasObjective<'_> {
    fn evaluate(&mut self, point: &[f64]) -> Result<f64> {
        self.evaluate_bias(point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Prediction;
    use crate::weights::{effective_number_weights, BiasVector};

    struct Perfect;
    impl Predictor for Perfect {
        fn predict(&self, _demos: &[&Example], query: &Example) -> Result<Prediction> {
            Ok(Prediction::Label(query.label))
        }
    }

    struct Wrong;
    impl Predictor for Wrong {
        fn predict(&self, _demos: &[&Example], query: &Example) -> Result<Prediction> {
            Ok(Prediction::Label(query.label + 1))
        }
    }

    struct Failing;
    impl Predictor for Failing {
        fn predict(&self, _demos: &[&Example], _query: &Example) -> Result<Prediction> {
            Err(Error::EmptyDemos)
        }
    }

    /// Majority label among the demos.
    struct Vote(usize);
    impl Predictor for Vote {
        fn predict(&self, demos: &[&Example], _query: &Example) -> Result<Prediction> {
            let mut h = vec![0usize; self.0];
            for d in demos {
                h[d.label] += 1;
            }
            Ok(Prediction::Label((0..self.0).max_by_key(|&c| (h[c], std::cmp::Reverse(c))).unwrap()))
        }
    }

    fn line(n: usize, label: usize, offset: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let t = (i + offset) as f64 * 0.37;
                Example::new(format!("c{label}-{i:03}"), "t", label).with_embedding(vec![t.cos(), t.sin()])
            })
            .collect()
    }

    fn fixture() -> (LabeledDataset, LabeledDataset) {
        let mut rem = line(30, 0, 0);
        rem.extend(line(6, 1, 5));
        let mut q = line(4, 0, 100);
        q.extend(line(4, 1, 200));
        (
            LabeledDataset::with_classes(q, 2).unwrap(),
            LabeledDataset::with_classes(rem, 2).unwrap(),
        )
    }

    fn objective<'a>(
        q: &'a LabeledDataset,
        r: &'a LabeledDataset,
        p: Arc<dyn Predictor>,
    ) -> BiasObjective<'a> {
        let w = effective_number_weights(r.counts()).unwrap();
        BiasObjective::new(q, r, &Scorer::Cosine, w, 4, 1600, p, MismatchMetric::ErrorRate).unwrap()
    }

    #[test]
    fn perfect_and_wrong_predictors() {
        let (q, r) = fixture();
        let mut perfect = objective(&q, &r, Arc::new(Perfect));
        assert_eq!(perfect.evaluate_bias(&[0.0, 0.0]).unwrap(), 0.0);
        let mut wrong = objective(&q, &r, Arc::new(Wrong));
        assert_eq!(wrong.evaluate_bias(&[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn repeated_point_hits_cache() {
        let (q, r) = fixture();
        let mut o = objective(&q, &r, Arc::new(Perfect));
        o.evaluate_bias(&[0.01, 0.02]).unwrap();
        let calls = o.predictor_calls();
        assert_eq!(calls, q.len());
        o.evaluate_bias(&[0.01, 0.02]).unwrap();
        assert_eq!(o.predictor_calls(), calls);
        o.evaluate_bias(&[0.01, 0.03]).unwrap();
        assert_eq!(o.predictor_calls(), 2 * calls);
    }

    #[test]
    fn non_positive_weight_rejected() {
        let (q, r) = fixture();
        let mut o = objective(&q, &r, Arc::new(Perfect));
        let w0 = o.weights().values[0];
        assert!(matches!(o.evaluate_bias(&[-w0, 0.0]), Err(Error::NonPositiveWeight { class: 0, .. })));
    }

    #[test]
    fn predictor_failure_names_query() {
        let (q, r) = fixture();
        let mut o = objective(&q, &r, Arc::new(Failing));
        match o.evaluate_bias(&[0.0, 0.0]) {
            Err(Error::PredictorFailure { query_id, .. }) => assert_eq!(query_id, q.get(0).id),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn at_angle(id: String, label: usize, t: f64) -> Example {
        Example::new(id, "t", label).with_embedding(vec![t.cos(), t.sin()])
    }

    #[test]
    fn grid_optimum_is_no_worse_than_zero_bias() {
        // Tail queries sit nearer the head arc than the tail arc, so plain
        // top-k hands them head demos and a majority vote gets them wrong.
        let mut rem: Vec<Example> = (0..30).map(|i| at_angle(format!("h{i:02}"), 0, 0.02 * i as f64)).collect();
        rem.extend((0..6).map(|i| at_angle(format!("t{i}"), 1, 1.0 + 0.04 * i as f64)));
        let mut qs: Vec<Example> = (0..4).map(|i| at_angle(format!("qh{i}"), 0, -0.3 + 0.02 * i as f64)).collect();
        qs.extend((0..4).map(|i| at_angle(format!("qt{i}"), 1, 0.7 + 0.01 * i as f64)));
        let r = LabeledDataset::with_classes(rem, 2).unwrap();
        let q = LabeledDataset::with_classes(qs, 2).unwrap();
        let w = ClassWeightVector::uniform(2);
        let bounds = BiasVector::default_bounds(&w);
        let mut o =
            BiasObjective::new(&q, &r, &Scorer::Cosine, w, 4, 1600, Arc::new(Vote(2)), MismatchMetric::ErrorRate)
                .unwrap();
        let at_zero = o.evaluate_bias(&[0.0, 0.0]).unwrap();
        assert_eq!(at_zero, 0.5);
        let mut best = f64::INFINITY;
        for i in 0..=10 {
            for j in 0..=10 {
                let b0 = bounds[0].0 + (bounds[0].1 - bounds[0].0) * i as f64 / 10.0;
                let b1 = bounds[1].0 + (bounds[1].1 - bounds[1].0) * j as f64 / 10.0;
                best = best.min(o.evaluate_bias(&[b0, b1]).unwrap());
            }
        }
        assert!(best <= at_zero);
        assert_eq!(best, 0.0);
    }
}
