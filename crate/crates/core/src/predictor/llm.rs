//! Language-model backed predictors over the scoring and generation endpoints.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::http::{HttpEndpoint, RetryPolicy};

use super::prompt::PromptTemplate;

pub const DEFAULT_MAX_NEW_TOKENS: usize = 50;

pub trait LanguageModel: Send + Sync {
    /// Log-probability of each token of `continuation` given `prompt`.
    fn score(&self, prompt: &str, continuation: &str) -> Result<Vec<f64>>;
    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String>;
}

pub struct HttpLanguageModel {
    endpoint: HttpEndpoint,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    #[serde(default)]
    token_logprobs: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_new_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

impl HttpLanguageModel {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy, max_concurrency: usize) -> Self {
        Self { endpoint: HttpEndpoint::new(base_url, api_key, retry, max_concurrency) }
    }
}

fn client_error(f: crate::http::HttpFailure) -> Error {
    Error::ClientError(format!("{} (after {} attempts)", f.detail, f.attempts))
}

impl LanguageModel for HttpLanguageModel {
    fn score(&self, prompt: &str, continuation: &str) -> Result<Vec<f64>> {
        let resp: ScoreResponse =
            self.endpoint.post_json("score", &ScoreRequest { prompt, continuation }).map_err(client_error)?;
        match resp.token_logprobs {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::MissingLogprobs),
        }
    }

    fn generate(&self, prompt: &str, max_new_tokens: usize) -> Result<String> {
        let resp: GenerateResponse = self
            .endpoint
            .post_json("generate", &GenerateRequest { prompt, max_new_tokens })
            .map_err(client_error)?;
        Ok(resp.text)
    }
}

/// `exp(−mean(logprobs))`.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(bad) = token_logprobs.iter().find(|v| !v.is_finite()) {
        return Err(Error::ClientError(format!("non-finite token logprob {bad}")));
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Class labels must map to distinct, non-empty strings.
pub fn validate_verbalizer(verbalizer: &[String], classes: usize) -> Result<()> {
    if verbalizer.len() != classes {
        return Err(Error::Config(format!("verbalizer has {} entries for {classes} labels", verbalizer.len())));
    }
    for (i, v) in verbalizer.iter().enumerate() {
        if v.trim().is_empty() {
            return Err(Error::Config(format!("verbalizer entry {i} is empty")));
        }
        if verbalizer[..i].contains(v) {
            return Err(Error::Config(format!("verbalizer string `{v}` is used twice")));
        }
    }
    Ok(())
}

/// Classification by lowest continuation perplexity.
pub struct PerplexityPredictor {
    client: Arc<dyn LanguageModel>,
    template: PromptTemplate,
    verbalizer: Vec<String>,
}

impl PerplexityPredictor {
    pub fn new(client: Arc<dyn LanguageModel>, template: PromptTemplate, verbalizer: Vec<String>) -> Result<Self> {
        validate_verbalizer(&verbalizer, verbalizer.len())?;
        Ok(Self { client, template, verbalizer })
    }

    pub fn prompt(&self, demos: &[&Example], query: &Example) -> Result<String> {
        let pairs = demos
            .iter()
            .map(|d| {
                let out = self
                    .verbalizer
                    .get(d.label)
                    .ok_or(Error::LabelOutOfRange { label: d.label, classes: self.verbalizer.len() })?;
                Ok((d.text.as_str(), out.as_str()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.template.render(&pairs, &query.text))
    }

    /// Perplexity of each verbalized label as the continuation.
    pub fn label_perplexities(&self, demos: &[&Example], query: &Example) -> Result<Vec<f64>> {
        if demos.is_empty() {
            return Err(Error::EmptyDemos);
        }
        let prompt = self.prompt(demos, query)?;
        self.verbalizer
            .iter()
            .map(|v| perplexity(&self.client.score(&prompt, &format!(" {v}"))?))
            .collect()
    }

    pub fn predict_label(&self, demos: &[&Example], query: &Example) -> Result<usize> {
        Ok(argmin(&self.label_perplexities(demos, query)?))
    }
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Free-form answer generation; demos show their reference outputs.
pub struct GeneratePredictor {
    client: Arc<dyn LanguageModel>,
    template: PromptTemplate,
    max_new_tokens: usize,
}

impl GeneratePredictor {
    pub fn new(client: Arc<dyn LanguageModel>, template: PromptTemplate, max_new_tokens: usize) -> Self {
        Self { client, template, max_new_tokens }
    }

    pub fn prompt(&self, demos: &[&Example], query: &Example) -> Result<String> {
        let pairs = demos
            .iter()
            .map(|d| {
                let target = d.target.as_deref().ok_or_else(|| Error::MissingTarget(d.id.clone()))?;
                Ok((d.text.as_str(), target))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.template.render(&pairs, &query.text))
    }

    pub fn generate(&self, demos: &[&Example], query: &Example) -> Result<String> {
        let prompt = self.prompt(demos, query)?;
        Ok(self.client.generate(&prompt, self.max_new_tokens)?.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct Stub {
        by_continuation: HashMap<String, Vec<f64>>,
        answer: String,
    }

    impl LanguageModel for Stub {
        fn score(&self, _prompt: &str, continuation: &str) -> Result<Vec<f64>> {
            self.by_continuation.get(continuation.trim()).cloned().ok_or(Error::MissingLogprobs)
        }
        fn generate(&self, _prompt: &str, _max: usize) -> Result<String> {
            Ok(self.answer.clone())
        }
    }

    fn stub(entries: &[(&str, Vec<f64>)]) -> Arc<dyn LanguageModel> {
        Arc::new(Stub {
            by_continuation: entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            answer: "Jan Koum".into(),
        })
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perplexity_identities() {
        let v = 100.0f64;
        assert!((perplexity(&[(1.0 / v).ln(); 7]).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(perplexity(&[0.0, 0.0]).unwrap(), 1.0);
        assert!((perplexity(&[-1.0, -2.0, -3.0]).unwrap() - 7.389_056_098_930_65).abs() < 1e-12);
        assert!(matches!(perplexity(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn lowest_perplexity_label_wins() {
        let client = stub(&[
            ("World", vec![-5.0]),
            ("Sports", vec![-0.1]),
            ("Business", vec![-5.0]),
            ("Sci/Tech", vec![-5.0]),
        ]);
        let p = PerplexityPredictor::new(client, PromptTemplate::default(), names(&["World", "Sports", "Business", "Sci/Tech"]))
            .unwrap();
        let demo = Example::new("d", "text", 0);
        assert_eq!(p.predict_label(&[&demo], &Example::new("q", "goal", 0)).unwrap(), 1);
    }

    #[test]
    fn identical_scores_tie_to_label_zero() {
        let client = stub(&[("a", vec![-1.0]), ("b", vec![-1.0]), ("c", vec![-1.0])]);
        let p = PerplexityPredictor::new(client, PromptTemplate::default(), names(&["a", "b", "c"])).unwrap();
        let demo = Example::new("d", "x", 2);
        assert_eq!(p.predict_label(&[&demo], &Example::new("q", "y", 0)).unwrap(), 0);
    }

    #[test]
    fn argmin_breaks_only_exact_ties() {
        assert_eq!(argmin(&[3.1, 2.0, 2.0, 9.9]), 1);
    }

    #[test]
    fn verbalizer_must_be_distinct() {
        assert!(validate_verbalizer(&names(&["a", "a"]), 2).is_err());
        assert!(validate_verbalizer(&names(&["a"]), 2).is_err());
        assert!(validate_verbalizer(&names(&["a", "b"]), 2).is_ok());
    }

    #[test]
    fn generation_returns_stub_answer() {
        let g = GeneratePredictor::new(stub(&[]), PromptTemplate::question_answer(""), DEFAULT_MAX_NEW_TOKENS);
        let demo = Example::new("d", "who founded whatsapp?", 0).with_target("Jan Koum");
        assert_eq!(g.generate(&[&demo], &Example::new("q", "x?", 0)).unwrap(), "Jan Koum");
        let bare = Example::new("b", "no answer", 0);
        assert!(matches!(g.generate(&[&bare], &demo), Err(Error::MissingTarget(_))));
    }

    #[test]
    fn demo_outputs_use_verbalizer() {
        let p = PerplexityPredictor::new(stub(&[]), PromptTemplate::default(), names(&["neg", "pos"])).unwrap();
        let demos = [Example::new("a", "bad", 0), Example::new("b", "good", 1)];
        let refs: Vec<&Example> = demos.iter().collect();
        let prompt = p.prompt(&refs, &Example::new("q", "fine", 0)).unwrap();
        assert_eq!(prompt, "Input: bad\nOutput: neg\n\nInput: good\nOutput: pos\n\nInput: fine\nOutput:");
    }
}
