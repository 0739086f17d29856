//! Config-driven experiment pipeline: dataset synthesis, bias estimation,
//! per-query selection and prediction, and report emission.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{optimize, BiasObjective, BoConfig, BoState};
use crate::dataset::{
    balanced_subset, imbalance_ratio, make_imbalanced, read_jsonl, write_jsonl, Example, ImbalanceSpec,
    LabeledDataset, LoadOptions, Task,
};
use crate::encoder::{EmbeddingProvider, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, exact_match, kl_conditional_diagnostic, mean_std, KlConfig};
use crate::predictor::{MismatchMetric, Prediction, Predictor, PredictorConfig};
use crate::selection::{
    candidate_pool, oversample, reweighted_select, stratified_select, top_k, undersample, PromptOrder,
    RankedCandidates, Scorer, DEFAULT_CANDIDATE_POOL,
};
use crate::weights::{BiasVector, ClassWeightVector, WeightScheme};
use crate::world::{GaussianWorld, MeanShift};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Topk,
    Oversample,
    Undersample,
    Stratified,
    Reweight,
    Rcb,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Random,
        Method::Topk,
        Method::Oversample,
        Method::Undersample,
        Method::Stratified,
        Method::Reweight,
        Method::Rcb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Topk => "topk",
            Method::Oversample => "oversample",
            Method::Undersample => "undersample",
            Method::Stratified => "stratified",
            Method::Reweight => "reweight",
            Method::Rcb => "rcb",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    /// Sample pool and test set from a [`GaussianWorld`]; the pool follows
    /// the imbalance spec and the test set is balanced.
    World {
        #[serde(flatten)]
        world: GaussianWorld,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        /// Displace one class's pool distribution away from its test distribution.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_shift: Option<MeanShift>,
    },
    Files {
        pool: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_names: Option<Vec<String>>,
    },
}

fn default_test_per_class() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimation {
    #[serde(default = "default_balanced_subset")]
    pub balanced_subset: usize,
    #[serde(flatten)]
    pub bo: BoConfig,
    /// Search box for β; defaults to `[−w_j + 1e-3, 1]` per class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Start the initial design with two anchors: `β = 0` (plain reweighting)
    /// and the `β` that makes `w + β` constant (plain top-k). The estimate then
    /// never scores worse on the balanced subset than either baseline.
    #[serde(default = "default_anchors")]
    pub anchors: bool,
}

fn default_anchors() -> bool {
    true
}

fn default_balanced_subset() -> usize {
    100
}

impl Default for BiasEstimation {
    fn default() -> Self {
        Self { balanced_subset: default_balanced_subset(), bo: BoConfig::default(), bounds: None, anchors: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub task: Task,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<ImbalanceSpec>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_scorer")]
    pub scorer: Scorer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_scheme: Option<WeightScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasEstimation>,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub prompt_order: PromptOrder,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Bias estimates written by `estimate-bias`; estimated in-process when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
    #[serde(default)]
    pub skip_failures: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<KlConfig>,
}

fn default_method() -> Method {
    Method::Topk
}
fn default_k() -> usize {
    8
}
fn default_pool_size() -> usize {
    DEFAULT_CANDIDATE_POOL
}
fn default_scorer() -> Scorer {
    Scorer::Cosine
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub ratio: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub base_url: Option<String>,
    pub skip_failures: bool,
}

impl RunConfig {
    /// A world experiment with default settings.
    pub fn world(world: GaussianWorld, imbalance: ImbalanceSpec, method: Method, seeds: Vec<u64>) -> Self {
        Self {
            task: Task::Classification,
            data: DataConfig::World { world, test_per_class: default_test_per_class(), pool_shift: None },
            encoder: None,
            imbalance: Some(imbalance),
            method,
            k: default_k(),
            pool_size: default_pool_size(),
            scorer: default_scorer(),
            weight_scheme: matches!(method, Method::Reweight | Method::Rcb).then_some(WeightScheme::EffectiveNumber),
            bias: (method == Method::Rcb).then(BiasEstimation::default),
            predictor: PredictorConfig::default(),
            prompt_order: PromptOrder::default(),
            seeds,
            output_dir: default_output_dir(),
            weights_file: None,
            skip_failures: false,
            kl: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(method) = o.method {
            self.method = method;
        }
        if let Some(ratio) = o.ratio {
            let spec = self
                .imbalance
                .as_mut()
                .ok_or_else(|| Error::Config("--ratio needs an imbalance spec in the config".into()))?;
            spec.ratio = ratio;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(url) = &o.base_url {
            self.predictor = self.predictor.clone().with_base_url(url);
            if let Some(EncoderConfig::Http { base_url, .. }) = &mut self.encoder {
                *base_url = url.clone();
            }
        }
        self.skip_failures |= o.skip_failures;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        match self.method {
            Method::Rcb => {
                if self.weight_scheme.is_none() {
                    return Err(Error::Config("method rcb needs a weight_scheme".into()));
                }
                if self.bias.is_none() && self.weights_file.is_none() {
                    return Err(Error::Config("method rcb needs a bias config or a weights_file".into()));
                }
            }
            Method::Reweight if self.weight_scheme.is_none() => {
                return Err(Error::Config("method reweight needs a weight_scheme".into()));
            }
            _ => {}
        }
        if let DataConfig::World { world, .. } = &self.data {
            world.validate()?;
            if self.task != Task::Classification {
                return Err(Error::Config("the Gaussian world only supports classification".into()));
            }
            if self.imbalance.is_none() {
                return Err(Error::Config("world data needs an imbalance spec".into()));
            }
        }
        if let Some(spec) = &self.imbalance {
            spec.validate()?;
        }
        let label_predictor = !matches!(self.predictor, PredictorConfig::GenerateLlm { .. });
        if label_predictor != (self.task == Task::Classification) {
            return Err(Error::Config(format!("predictor {:?} does not fit task {:?}", self.predictor, self.task)));
        }
        Ok(())
    }

    fn metric(&self) -> MismatchMetric {
        MismatchMetric::for_task(self.task)
    }
}

/// Annotated pool and test set for one seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pool: LabeledDataset,
    pub test: LabeledDataset,
}

fn seeded_spec(spec: &ImbalanceSpec, seed: u64) -> ImbalanceSpec {
    ImbalanceSpec { seed, ..spec.clone() }
}

/// Build (or load) the pool and test set for `seed`.
pub fn prepare_data(config: &RunConfig, seed: u64) -> Result<PreparedData> {
    match &config.data {
        DataConfig::World { world, test_per_class, pool_shift } => {
            let spec = config.imbalance.as_ref().ok_or_else(|| Error::Config("world data needs an imbalance spec".into()))?;
            let counts = seeded_spec(spec, seed).class_counts(world.classes)?;
            let pool = world.sample_shifted(&counts, seed, "pool", pool_shift.as_ref())?;
            let test = world.sample(&vec![*test_per_class; world.classes], seed, "test")?;
            Ok(PreparedData { pool, test })
        }
        DataConfig::Files { pool, test, label_names } => {
            let test_path = test.as_ref().ok_or_else(|| Error::Config("files data needs a test path to run".into()))?;
            let source = read_jsonl(pool, &LoadOptions { task: config.task, label_names: label_names.clone() })?;
            let opts = LoadOptions { task: config.task, label_names: Some(source.label_names().to_vec()) };
            let test = read_jsonl(test_path, &opts)?;
            let pool = match &config.imbalance {
                Some(spec) => make_imbalanced(&source, &seeded_spec(spec, seed))?,
                None => source,
            };
            match &config.encoder {
                None => Ok(PreparedData { pool, test }),
                Some(enc) => {
                    let provider = EmbeddingProvider::from_config(enc, Some(&pool)).map_err(|e| e.in_stage("encoder"))?;
                    let pool = provider.embed_dataset(&pool).map_err(|e| e.in_stage("encoder"))?;
                    let test = provider.embed_dataset(&test).map_err(|e| e.in_stage("encoder"))?;
                    Ok(PreparedData { pool, test })
                }
            }
        }
    }
}

/// One seed's bias estimate, as stored in the weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub seed: u64,
    pub weights: ClassWeightVector,
    pub beta: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub objective: f64,
    pub objective_at_zero: f64,
    pub balanced_counts: Vec<usize>,
    pub remainder_counts: Vec<usize>,
    pub predictor_calls: usize,
    pub trace: BoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub entries: Vec<BiasRecord>,
}

impl WeightsFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn for_seed(&self, seed: u64) -> Result<&BiasRecord> {
        self.entries
            .iter()
            .find(|r| r.seed == seed)
            .ok_or_else(|| Error::Config(format!("weights file has no entry for seed {seed}")))
    }
}

fn class_weights(config: &RunConfig, pool: &LabeledDataset) -> Result<ClassWeightVector> {
    ClassWeightVector::from_counts(config.weight_scheme.unwrap_or_default(), pool.counts())
}

/// Estimate β on a balanced subset of `data.pool` with `predictor`.
pub fn estimate_bias_with(
    config: &RunConfig,
    data: &PreparedData,
    seed: u64,
    predictor: Arc<dyn Predictor>,
) -> Result<BiasRecord> {
    let mut est = config.bias.clone().unwrap_or_default();
    let (balanced, remainder) =
        balanced_subset(&data.pool, est.balanced_subset, seed).map_err(|e| e.in_stage("balanced subset"))?;
    let weights = class_weights(config, &data.pool)?;
    let bounds = est.bounds.clone().unwrap_or_else(|| BiasVector::default_bounds(&weights));
    if bounds.len() != weights.len() {
        return Err(Error::Config(format!("{} bias bounds for {} classes", bounds.len(), weights.len())));
    }
    if est.anchors {
        let max = weights.values.iter().copied().fold(f64::MIN, f64::max);
        let flat: Vec<f64> = weights.values.iter().map(|w| max - w).collect();
        est.bo.seed_points.splice(0..0, [vec![0.0; weights.len()], flat]);
    }
    let mut objective = BiasObjective::new(
        &balanced,
        &remainder,
        &config.scorer,
        weights.clone(),
        config.k,
        config.pool_size,
        predictor,
        config.metric(),
    )
    .map_err(|e| e.in_stage("bias objective"))?
    .with_order(config.prompt_order);
    let outcome = optimize(&mut objective, &bounds, &est.bo, seed).map_err(|e| Error::from(e).in_stage("bias search"))?;
    let objective_at_zero = objective.evaluate_bias(&vec![0.0; weights.len()]).map_err(|e| e.in_stage("bias search"))?;
    Ok(BiasRecord {
        seed,
        weights,
        beta: outcome.best_point,
        bounds,
        objective: outcome.best_value,
        objective_at_zero,
        balanced_counts: balanced.counts().to_vec(),
        remainder_counts: remainder.counts().to_vec(),
        predictor_calls: objective.predictor_calls(),
        trace: outcome.state,
    })
}

pub fn estimate_bias(config: &RunConfig, seed: u64) -> Result<BiasRecord> {
    let data = prepare_data(config, seed)?;
    let predictor = config.predictor.build(data.pool.label_names())?;
    estimate_bias_with(config, &data, seed, predictor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub label: usize,
    /// Selected demonstration ids in prompt order.
    pub demonstrations: Vec<String>,
    pub demonstration_labels: Vec<usize>,
    pub prediction: Prediction,
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub evaluated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_accuracy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_per_class: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Effective config of this run; rerunning it reproduces the report.
    pub config: RunConfig,
    pub seed: u64,
    pub method: Method,
    pub imbalance_ratio: f64,
    pub pool_counts: Vec<usize>,
    pub selection_pool_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub k: usize,
    pub pool_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<ClassWeightVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasRecord>,
    pub metrics: RunMetrics,
    pub skipped: Vec<String>,
    pub queries: Vec<QueryRecord>,
}

/// Per-query selection for one method.
enum Selector<'a> {
    Plain { ds: &'a LabeledDataset, scorer: Scorer },
    Stratified { ds: &'a LabeledDataset },
    Weighted { ds: &'a LabeledDataset, weights: ClassWeightVector, beta: Option<Vec<f64>> },
}

impl Selector<'_> {
    fn dataset(&self) -> &LabeledDataset {
        match self {
            Selector::Plain { ds, .. } | Selector::Stratified { ds } | Selector::Weighted { ds, .. } => ds,
        }
    }

    fn select(&self, config: &RunConfig, query: &Example) -> Result<RankedCandidates> {
        match self {
            Selector::Plain { ds, scorer } => top_k(ds, query, scorer, config.k),
            Selector::Stratified { ds } => stratified_select(ds, query, &config.scorer, config.k),
            Selector::Weighted { ds, weights, beta } => {
                let pool = candidate_pool(ds, query, &config.scorer, config.pool_size.min(ds.len()))?;
                reweighted_select(&pool, weights, beta.as_deref(), config.k)
            }
        }
    }
}

/// Run one seed with an explicit predictor. `bias` is required for rcb.
pub fn run_seed_with(
    config: &RunConfig,
    seed: u64,
    data: &PreparedData,
    predictor: Arc<dyn Predictor>,
    bias: Option<BiasRecord>,
) -> Result<RunReport> {
    let resampled;
    let selector = match config.method {
        Method::Random => Selector::Plain { ds: &data.pool, scorer: Scorer::Random { seed } },
        Method::Topk => Selector::Plain { ds: &data.pool, scorer: config.scorer },
        Method::Oversample => {
            resampled = oversample(&data.pool);
            Selector::Plain { ds: &resampled, scorer: config.scorer }
        }
        Method::Undersample => {
            resampled = undersample(&data.pool, seed);
            Selector::Plain { ds: &resampled, scorer: config.scorer }
        }
        Method::Stratified => Selector::Stratified { ds: &data.pool },
        Method::Reweight => {
            Selector::Weighted { ds: &data.pool, weights: class_weights(config, &data.pool)?, beta: None }
        }
        Method::Rcb => {
            let record = bias.as_ref().ok_or_else(|| Error::Config("method rcb needs a bias estimate".into()))?;
            if record.weights.len() != data.pool.class_count() {
                return Err(Error::Config("bias estimate has the wrong number of classes".into()));
            }
            Selector::Weighted { ds: &data.pool, weights: record.weights.clone(), beta: Some(record.beta.clone()) }
        }
    };
    let metric = config.metric();
    let selection_ds = selector.dataset();

    let outcomes: Vec<Result<QueryRecord>> = data
        .test
        .examples()
        .par_iter()
        .map(|query| -> Result<Result<QueryRecord>> {
            let chosen = selector.select(config, query).map_err(|e| e.in_stage("selection"))?;
            let sequence = chosen.prompt_sequence(config.prompt_order);
            let demos: Vec<&Example> = sequence.iter().map(|c| selection_ds.get(c.index)).collect();
            Ok(predictor.predict(&demos, query).and_then(|prediction| {
                let mismatch = metric.mismatch(&prediction, query)?;
                Ok(QueryRecord {
                    id: query.id.clone(),
                    label: query.label,
                    demonstrations: sequence.iter().map(|c| c.id.clone()).collect(),
                    demonstration_labels: sequence.iter().map(|c| c.label).collect(),
                    prediction,
                    mismatch,
                })
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut queries = Vec::with_capacity(outcomes.len());
    let mut skipped = Vec::new();
    let mut first_failure = None;
    for (query, outcome) in data.test.examples().iter().zip(outcomes) {
        match outcome {
            Ok(record) => queries.push(record),
            Err(e) => {
                let failure = Error::PredictorFailure { query_id: query.id.clone(), source: Box::new(e) };
                if !config.skip_failures {
                    return Err(failure);
                }
                skipped.push(query.id.clone());
                first_failure.get_or_insert(failure);
            }
        }
    }
    if queries.is_empty() {
        // Nothing left to score; surface why.
        return Err(first_failure.unwrap_or_else(|| Error::Config("test set is empty".into())));
    }

    let mut metrics = RunMetrics {
        evaluated: queries.len(),
        accuracy: None,
        per_class_accuracy: None,
        macro_f1: None,
        em: None,
        kl_per_class: None,
    };
    match config.task {
        Task::Classification => {
            let preds: Vec<usize> = queries
                .iter()
                .map(|q| match q.prediction {
                    Prediction::Label(l) => l,
                    Prediction::Text(_) => unreachable!("label metric checked the prediction kind"),
                })
                .collect();
            let refs: Vec<usize> = queries.iter().map(|q| q.label).collect();
            let m = classification_metrics(&preds, &refs, data.pool.class_count())?;
            metrics.accuracy = Some(m.accuracy);
            metrics.per_class_accuracy = Some(m.per_class_accuracy);
            metrics.macro_f1 = Some(m.macro_f1);
        }
        Task::Generation => {
            let by_id: std::collections::HashMap<&str, &Example> =
                data.test.examples().iter().map(|e| (e.id.as_str(), e)).collect();
            let total: f64 = queries
                .iter()
                .map(|q| match &q.prediction {
                    Prediction::Text(t) => exact_match(t, by_id[q.id.as_str()].target.as_deref().unwrap_or_default()),
                    Prediction::Label(_) => 0.0,
                })
                .sum();
            metrics.em = Some(total / queries.len() as f64);
        }
    }
    if let Some(kl) = &config.kl {
        metrics.kl_per_class =
            Some(kl_conditional_diagnostic(&data.pool, &data.test, kl, seed).map_err(|e| e.in_stage("kl diagnostic"))?);
    }

    let weights = match &selector {
        Selector::Weighted { weights, .. } => Some(weights.clone()),
        _ => None,
    };
    Ok(RunReport {
        config: RunConfig { seeds: vec![seed], ..config.clone() },
        seed,
        method: config.method,
        imbalance_ratio: imbalance_ratio(&data.pool)?,
        pool_counts: data.pool.counts().to_vec(),
        selection_pool_counts: selection_ds.counts().to_vec(),
        test_counts: data.test.counts().to_vec(),
        k: config.k,
        pool_size: config.pool_size,
        weights,
        bias: if config.method == Method::Rcb { bias } else { None },
        metrics,
        skipped,
        queries,
    })
}

/// Run one seed, estimating β in-process for rcb unless `bias` is given.
pub fn run_seed(config: &RunConfig, seed: u64, bias: Option<BiasRecord>) -> Result<RunReport> {
    let data = prepare_data(config, seed)?;
    let predictor = config.predictor.build(data.pool.label_names())?;
    let bias = match (config.method, bias) {
        (Method::Rcb, None) => Some(estimate_bias_with(config, &data, seed, predictor.clone())?),
        (_, b) => b,
    };
    run_seed_with(config, seed, &data, predictor, bias)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub label_names: Vec<String>,
    pub counts: Vec<usize>,
    pub imbalance_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<ImbalanceSpec>,
    pub pool_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_file: Option<PathBuf>,
}

/// Write the imbalanced pool (and, for world data, the test set) with a
/// manifest of achieved counts. Returns the manifest.
pub fn cmd_gen(config: &RunConfig) -> Result<Manifest> {
    let seed = *config.seeds.first().ok_or_else(|| Error::Config("seeds must not be empty".into()))?;
    let dir = &config.output_dir;
    let (pool, test) = match &config.data {
        DataConfig::World { .. } => {
            config.validate()?;
            let data = prepare_data(config, seed)?;
            (data.pool, Some(data.test))
        }
        DataConfig::Files { pool, label_names, .. } => {
            let spec = config.imbalance.as_ref().ok_or_else(|| Error::Config("gen needs an imbalance spec".into()))?;
            let source = read_jsonl(pool, &LoadOptions { task: config.task, label_names: label_names.clone() })?;
            (make_imbalanced(&source, &seeded_spec(spec, seed))?, None)
        }
    };
    create_dir(dir)?;
    let pool_file = dir.join("pool.jsonl");
    write_jsonl(&pool, &pool_file, config.task)?;
    let test_file = match &test {
        Some(t) => {
            let path = dir.join("test.jsonl");
            write_jsonl(t, &path, config.task)?;
            Some(path)
        }
        None => None,
    };
    let manifest = Manifest {
        seed,
        label_names: pool.label_names().to_vec(),
        counts: pool.counts().to_vec(),
        imbalance_ratio: imbalance_ratio(&pool)?,
        imbalance: config.imbalance.as_ref().map(|s| seeded_spec(s, seed)),
        pool_file,
        test_file,
    };
    write_json(&manifest, &dir.join("manifest.json"))?;
    Ok(manifest)
}

pub const WEIGHTS_FILE: &str = "weights.json";

/// Estimate β once per seed and write `weights.json` to the output directory.
pub fn cmd_estimate_bias(config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    let entries = config.seeds.iter().map(|&seed| estimate_bias(config, seed)).collect::<Result<Vec<_>>>()?;
    create_dir(&config.output_dir)?;
    let path = config.output_dir.join(WEIGHTS_FILE);
    write_json(&WeightsFile { entries }, &path)?;
    Ok(path)
}

pub fn report_name(method: Method, seed: u64) -> String {
    format!("report-{method}-seed{seed}.json")
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Run every seed, writing one JSON report per seed and `summary.csv`.
pub fn cmd_run(config: &RunConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    let weights = match (&config.weights_file, config.method) {
        (Some(path), Method::Rcb) => Some(WeightsFile::load(path)?),
        _ => None,
    };
    create_dir(&config.output_dir)?;
    let mut reports = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let bias = weights.as_ref().map(|w| w.for_seed(seed).cloned()).transpose()?;
        let report = run_seed(config, seed, bias)?;
        write_json(&report, &config.output_dir.join(report_name(config.method, seed)))?;
        reports.push(report);
    }
    write_summary_csv(&reports, &config.output_dir.join(SUMMARY_FILE))?;
    Ok(reports)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn aggregate(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let present: Option<Vec<f64>> = values.iter().copied().collect();
    present.filter(|v| !v.is_empty()).map(|v| mean_std(&v))
}

/// Cross-run table with one row per report, then `mean` and `std` rows.
pub fn write_summary_csv(reports: &[RunReport], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["method", "phi", "k", "seed", "accuracy", "macro_f1", "em"])?;
    for r in reports {
        w.write_record([
            r.method.name().to_string(),
            r.imbalance_ratio.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            opt_cell(r.metrics.accuracy),
            opt_cell(r.metrics.macro_f1),
            opt_cell(r.metrics.em),
        ])?;
    }
    if let Some(first) = reports.first() {
        let acc = aggregate(&reports.iter().map(|r| r.metrics.accuracy).collect::<Vec<_>>());
        let f1 = aggregate(&reports.iter().map(|r| r.metrics.macro_f1).collect::<Vec<_>>());
        let em = aggregate(&reports.iter().map(|r| r.metrics.em).collect::<Vec<_>>());
        let phis: Vec<f64> = reports.iter().map(|r| r.imbalance_ratio).collect();
        let phi = if phis.iter().all(|&p| p == phis[0]) { phis[0].to_string() } else { mean_std(&phis).0.to_string() };
        for (row, pick) in [("mean", 0usize), ("std", 1)] {
            let cell = |a: Option<(f64, f64)>| opt_cell(a.map(|(m, s)| if pick == 0 { m } else { s }));
            w.write_record([
                first.method.name().to_string(),
                phi.clone(),
                first.k.to_string(),
                row.to_string(),
                cell(acc),
                cell(f1),
                cell(em),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
