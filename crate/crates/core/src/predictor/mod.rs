//! In-context predictors and the mismatch metric scored against references.

pub mod llm;
mod oracle;
mod prompt;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use llm::{perplexity, GeneratePredictor, HttpLanguageModel, LanguageModel, PerplexityPredictor};
pub use oracle::{OracleConfig, SyntheticOracle};
pub use prompt::PromptTemplate;

use crate::dataset::{Example, Task};
use crate::error::{Error, Result};
use crate::eval::exact_match;
use crate::http::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Label(usize),
    Text(String),
}

/// Maps demonstrations (in prompt order) and a query to an output.
pub trait Predictor: Send + Sync {
    fn predict(&self, demos: &[&Example], query: &Example) -> Result<Prediction>;
}

impl Predictor for SyntheticOracle {
    fn predict(&self, demos: &[&Example], query: &Example) -> Result<Prediction> {
        self.predict_label(demos, query).map(Prediction::Label)
    }
}

impl Predictor for PerplexityPredictor {
    fn predict(&self, demos: &[&Example], query: &Example) -> Result<Prediction> {
        self.predict_label(demos, query).map(Prediction::Label)
    }
}

impl Predictor for GeneratePredictor {
    fn predict(&self, demos: &[&Example], query: &Example) -> Result<Prediction> {
        self.generate(demos, query).map(Prediction::Text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchMetric {
    /// 0 when the predicted label is the query's, else 1.
    ErrorRate,
    /// −1 on an exact match with the query's reference output, else 0.
    NegativeEm,
}

impl MismatchMetric {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => MismatchMetric::ErrorRate,
            Task::Generation => MismatchMetric::NegativeEm,
        }
    }

    pub fn mismatch(&self, prediction: &Prediction, query: &Example) -> Result<f64> {
        match (self, prediction) {
            (MismatchMetric::ErrorRate, Prediction::Label(l)) => Ok(if *l == query.label { 0.0 } else { 1.0 }),
            (MismatchMetric::NegativeEm, Prediction::Text(t)) => {
                let reference = query.target.as_deref().ok_or_else(|| Error::MissingTarget(query.id.clone()))?;
                Ok(-exact_match(t, reference))
            }
            (MismatchMetric::ErrorRate, Prediction::Text(_)) => {
                Err(Error::Config("error-rate mismatch needs a label predictor".into()))
            }
            (MismatchMetric::NegativeEm, Prediction::Label(_)) => {
                Err(Error::Config("exact-match mismatch needs a generating predictor".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorConfig {
    SyntheticOracle {
        #[serde(flatten)]
        oracle: OracleConfig,
    },
    PerplexityLlm {
        base_url: String,
        #[serde(default)]
        template: PromptTemplate,
        /// Defaults to the dataset's label names.
        #[serde(default)]
        verbalizer: Option<Vec<String>>,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_concurrency")]
        max_concurrency: usize,
    },
    GenerateLlm {
        base_url: String,
        #[serde(default = "qa_template")]
        template: PromptTemplate,
        #[serde(default = "default_max_new_tokens")]
        max_new_tokens: usize,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_concurrency")]
        max_concurrency: usize,
    },
}

fn default_concurrency() -> usize {
    4
}
fn default_max_new_tokens() -> usize {
    llm::DEFAULT_MAX_NEW_TOKENS
}
fn qa_template() -> PromptTemplate {
    PromptTemplate::question_answer("")
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig::SyntheticOracle { oracle: OracleConfig::default() }
    }
}

impl PredictorConfig {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, PredictorConfig::SyntheticOracle { .. })
    }

    pub fn with_base_url(mut self, url: &str) -> Self {
        match &mut self {
            PredictorConfig::PerplexityLlm { base_url, .. } | PredictorConfig::GenerateLlm { base_url, .. } => {
                *base_url = url.to_string();
            }
            PredictorConfig::SyntheticOracle { .. } => {}
        }
        self
    }

    /// Instantiate against a dataset with `label_names`. LLM clients read the
    /// bearer token from the environment.
    pub fn build(&self, label_names: &[String]) -> Result<Arc<dyn Predictor>> {
        Ok(match self {
            PredictorConfig::SyntheticOracle { oracle } => {
                Arc::new(SyntheticOracle::new(label_names.len(), oracle.clone()))
            }
            PredictorConfig::PerplexityLlm { base_url, template, verbalizer, retry, max_concurrency } => {
                let verbalizer = verbalizer.clone().unwrap_or_else(|| label_names.to_vec());
                llm::validate_verbalizer(&verbalizer, label_names.len())?;
                let client = HttpLanguageModel::new(
                    base_url.clone(),
                    crate::http::api_key_from_env(),
                    retry.clone(),
                    *max_concurrency,
                );
                Arc::new(PerplexityPredictor::new(Arc::new(client), template.clone(), verbalizer)?)
            }
            PredictorConfig::GenerateLlm { base_url, template, max_new_tokens, retry, max_concurrency } => {
                let client = HttpLanguageModel::new(
                    base_url.clone(),
                    crate::http::api_key_from_env(),
                    retry.clone(),
                    *max_concurrency,
                );
                Arc::new(GeneratePredictor::new(Arc::new(client), template.clone(), *max_new_tokens))
            }
        })
    }
}
