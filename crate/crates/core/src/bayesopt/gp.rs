//! Gaussian-process surrogate and the Expected Improvement acquisition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Length scale on the unit-normalized search box.
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_signal_variance")]
    pub signal_variance: f64,
    /// Observation noise added to the Gram diagonal.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Largest jitter tried (×10 per step) before giving up on Cholesky.
    #[serde(default = "default_max_jitter")]
    pub max_jitter: f64,
    /// Fit on targets rescaled to unit standard deviation; the posterior is
    /// reported in the original units.
    #[serde(default = "default_standardize")]
    pub standardize: bool,
}

fn default_length_scale() -> f64 {
    0.2
}
fn default_signal_variance() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    1e-6
}
fn default_max_jitter() -> f64 {
    1e-2
}
fn default_standardize() -> bool {
    true
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            length_scale: default_length_scale(),
            signal_variance: default_signal_variance(),
            jitter: default_jitter(),
            max_jitter: default_max_jitter(),
            standardize: default_standardize(),
        }
    }
}

impl KernelParams {
    /// Squared-exponential kernel on normalized inputs.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-sq / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// GP regression posterior with a constant prior mean equal to the mean of
/// the observed targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    params: KernelParams,
    bounds: Vec<(f64, f64)>,
    inputs: Vec<Vec<f64>>,
    prior_mean: f64,
    scale: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GaussianProcess {
    pub fn fit(points: &[Vec<f64>], values: &[f64], bounds: &[(f64, f64)], params: &KernelParams) -> Result<Self> {
        assert_eq!(points.len(), values.len(), "one target per point");
        assert!(!points.is_empty(), "GP needs at least one observation");
        let inputs: Vec<Vec<f64>> = points.iter().map(|p| to_unit(p, bounds)).collect();
        let n = inputs.len();
        let prior_mean = values.iter().sum::<f64>() / n as f64;
        let spread = (values.iter().map(|v| (v - prior_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = if params.standardize && spread > 1e-12 { spread } else { 1.0 };
        let gram = DMatrix::from_fn(n, n, |i, j| params.kernel(&inputs[i], &inputs[j]));
        let centered = DVector::from_iterator(n, values.iter().map(|v| (v - prior_mean) / scale));

        let mut jitter = params.jitter;
        loop {
            let mut k = gram.clone();
            for i in 0..n {
                k[(i, i)] += jitter;
            }
            if let Some(chol) = k.cholesky() {
                let alpha = chol.solve(&centered);
                return Ok(Self {
                    params: params.clone(),
                    bounds: bounds.to_vec(),
                    inputs,
                    prior_mean,
                    scale,
                    alpha,
                    chol,
                    jitter,
                });
            }
            if jitter >= params.max_jitter * (1.0 - 1e-9) {
                return Err(Error::SingularGram { jitter });
            }
            jitter = (jitter * 10.0).max(1e-12).min(params.max_jitter);
        }
    }

    /// Jitter that made the Gram matrix factorize.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Posterior `(mean, standard deviation)` at `point` (in search-box units).
    pub fn posterior(&self, point: &[f64]) -> (f64, f64) {
        let u = to_unit(point, &self.bounds);
        let kstar = DVector::from_iterator(self.inputs.len(), self.inputs.iter().map(|x| self.params.kernel(x, &u)));
        let mean = self.prior_mean + self.scale * kstar.dot(&self.alpha);
        let v = self.chol.solve(&kstar);
        let var = self.params.signal_variance - kstar.dot(&v);
        (mean, self.scale * var.max(0.0).sqrt())
    }
}

fn to_unit(point: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    point.iter().zip(bounds).map(|(&x, &(lo, hi))| (x - lo) / (hi - lo)).collect()
}

pub(crate) fn from_unit(u: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    u.iter().zip(bounds).map(|(&t, &(lo, hi))| lo + t * (hi - lo)).collect()
}

pub fn standard_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected Improvement for minimization: with `I = best − μ − ε` and
/// `Z = I/σ`, `EI = I·Φ(Z) + σ·φ(Z)` when `σ > 0`, else `0`.
pub fn expected_improvement(mean: f64, std: f64, best: f64, epsilon: f64) -> f64 {
    if !(std > 0.0) {
        return 0.0;
    }
    let improvement = best - mean - epsilon;
    let z = improvement / std;
    (improvement * standard_normal_cdf(z) + std * standard_normal_pdf(z)).max(0.0)
}
