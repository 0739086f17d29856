//! Box-constrained Bayesian optimization: GP surrogate, Expected Improvement,
//! and a fixed evaluation budget.

mod gp;
mod objective;

pub use gp::{expected_improvement, standard_normal_cdf, standard_normal_pdf, GaussianProcess, KernelParams};
pub use objective::BiasObjective;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Anything that maps a point of the search box to a loss to minimize.
pub trait Objective {
    fn evaluate(&mut self, point: &[f64]) -> Result<f64>;
}

impl<F: FnMut(&[f64]) -> Result<f64>> Objective for F {
    fn evaluate(&mut self, point: &[f64]) -> Result<f64> {
        self(point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    #[serde(default = "default_initial")]
    pub initial_points: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_candidates")]
    pub candidates_per_step: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub kernel: KernelParams,
    /// Points evaluated before the random design; they count toward `initial_points`.
    #[serde(default)]
    pub seed_points: Vec<Vec<f64>>,
}

fn default_initial() -> usize {
    8
}
fn default_iterations() -> usize {
    30
}
fn default_candidates() -> usize {
    1024
}
fn default_epsilon() -> f64 {
    0.01
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            initial_points: default_initial(),
            iterations: default_iterations(),
            candidates_per_step: default_candidates(),
            epsilon: default_epsilon(),
            kernel: KernelParams::default(),
            seed_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 0-based evaluation index; the first `initial_points` are the design.
    pub step: usize,
    pub point: Vec<f64>,
    pub value: f64,
    /// Best value seen up to and including this step.
    pub incumbent_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoState {
    pub bounds: Vec<(f64, f64)>,
    pub trace: Vec<TraceEntry>,
    best: Option<usize>,
}

impl BoState {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self { bounds, trace: Vec::new(), best: None }
    }

    fn record(&mut self, point: Vec<f64>, value: f64) {
        let better = match self.best {
            None => true,
            Some(b) => value < self.trace[b].value,
        };
        if better {
            self.best = Some(self.trace.len());
        }
        let incumbent_value = if better { value } else { self.trace[self.best.unwrap()].value };
        self.trace.push(TraceEntry { step: self.trace.len(), point, value, incumbent_value });
    }

    /// Best point and value so far.
    pub fn incumbent(&self) -> Option<(&[f64], f64)> {
        self.best.map(|b| (self.trace[b].point.as_slice(), self.trace[b].value))
    }

    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub state: BoState,
}

/// Optimization stopped by an objective or surrogate failure; `partial` holds
/// everything evaluated before it.
#[derive(Debug)]
pub struct BoAbort {
    pub error: Error,
    pub partial: BoState,
}

impl From<BoAbort> for Error {
    fn from(a: BoAbort) -> Self {
        a.error
    }
}

pub fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
    if bounds.is_empty() {
        return Err(Error::Config("search box has no dimensions".into()));
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("search box dimension {i} has invalid bounds [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Minimize `objective` over the box with `initial_points + iterations` evaluations.
pub fn optimize(
    objective: &mut dyn Objective,
    bounds: &[(f64, f64)],
    config: &BoConfig,
    seed: u64,
) -> Result<BoOutcome, BoAbort> {
    let mut state = BoState::new(bounds.to_vec());
    if let Err(error) = validate_bounds(bounds).and_then(|_| check_config(config, bounds)) {
        return Err(BoAbort { error, partial: state });
    }
    let mut rng = rng::stream(seed, "bayesopt");
    let d = bounds.len();

    let mut design: Vec<Vec<f64>> = config.seed_points.iter().map(|p| clamp(p, bounds)).collect();
    while design.len() < config.initial_points {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        design.push(gp::from_unit(&u, bounds));
    }

    for point in design {
        match objective.evaluate(&point) {
            Ok(v) => state.record(point, v),
            Err(error) => return Err(BoAbort { error, partial: state }),
        }
    }

    for _ in 0..config.iterations {
        let points: Vec<Vec<f64>> = state.trace.iter().map(|t| t.point.clone()).collect();
        let values: Vec<f64> = state.trace.iter().map(|t| t.value).collect();
        let surrogate = match GaussianProcess::fit(&points, &values, bounds, &config.kernel) {
            Ok(g) => g,
            Err(error) => return Err(BoAbort { error, partial: state }),
        };
        let best = state.incumbent().map(|(_, v)| v).unwrap_or(f64::INFINITY);
        let mut chosen: Option<(f64, Vec<f64>)> = None;
        for _ in 0..config.candidates_per_step {
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let x = gp::from_unit(&u, bounds);
            let (mu, sigma) = surrogate.posterior(&x);
            let ei = expected_improvement(mu, sigma, best, config.epsilon);
            if chosen.as_ref().is_none_or(|(e, _)| ei > *e) {
                chosen = Some((ei, x));
            }
        }
        let (_, point) = chosen.expect("at least one candidate per step");
        match objective.evaluate(&point) {
            Ok(v) => state.record(point, v),
            Err(error) => return Err(BoAbort { error, partial: state }),
        }
    }

    let (best_point, best_value) = match state.incumbent() {
        Some((p, v)) => (p.to_vec(), v),
        None => {
            return Err(BoAbort { error: Error::Config("optimization budget is zero".into()), partial: state })
        }
    };
    Ok(BoOutcome { best_point, best_value, state })
}

fn check_config(config: &BoConfig, bounds: &[(f64, f64)]) -> Result<()> {
    if config.initial_points < 2 {
        return Err(Error::Config("bayesopt needs at least two initial points".into()));
    }
    if config.candidates_per_step == 0 {
        return Err(Error::Config("bayesopt needs at least one candidate per step".into()));
    }
    if config.seed_points.len() > config.initial_points {
        return Err(Error::Config("more seed points than initial points".into()));
    }
    if config.seed_points.iter().any(|p| p.len() != bounds.len()) {
        return Err(Error::Config("seed point dimension differs from the search box".into()));
    }
    Ok(())
}

fn clamp(p: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    p.iter().zip(bounds).map(|(&x, &(lo, hi))| x.clamp(lo, hi)).collect()
}
