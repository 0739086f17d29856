//! Class weights `w`, conditional bias `β`, and the importance-ratio
//! decomposition `P_t(x,y)/P_c(x,y) = w_y + β_{x,y}` that motivates them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `(1 − α)/(1 − α^{n_j})`, `α = (N − 1)/N`.
    #[default]
    EffectiveNumber,
    /// `N/(k·n_j)`, mean one on balanced data.
    InverseFrequency,
    /// `n_j/N`, favouring head classes.
    LiteralFrequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightVector {
    pub values: Vec<f64>,
    pub scheme: WeightScheme,
}

impl ClassWeightVector {
    pub fn uniform(classes: usize) -> Self {
        Self { values: vec![1.0; classes], scheme: WeightScheme::Uniform }
    }

    pub fn from_counts(scheme: WeightScheme, counts: &[usize]) -> Result<Self> {
        match scheme {
            WeightScheme::EffectiveNumber => effective_number_weights(counts),
            WeightScheme::InverseFrequency => frequency_weights(counts, true),
            WeightScheme::LiteralFrequency => frequency_weights(counts, false),
            WeightScheme::Uniform => {
                validate_counts(counts)?;
                Ok(Self::uniform(counts.len()))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rescaled copy with mean one.
    pub fn mean_normalized(&self) -> Self {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        Self { values: self.values.iter().map(|v| v / mean).collect(), scheme: self.scheme }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    pub values: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl BiasVector {
    pub fn zeros(bounds: Vec<(f64, f64)>) -> Self {
        Self { values: vec![0.0; bounds.len()], bounds }
    }

    pub fn new(values: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if values.len() != bounds.len() {
            return Err(Error::InvalidCounts(format!("{} bias values for {} bounds", values.len(), bounds.len())));
        }
        for (j, (&v, &(lo, hi))) in values.iter().zip(&bounds).enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidCounts(format!("empty bias interval [{lo}, {hi}] for class {j}")));
            }
            if v < lo || v > hi {
                return Err(Error::InvalidCounts(format!("bias {v} outside [{lo}, {hi}] for class {j}")));
            }
        }
        Ok(Self { values, bounds })
    }

    /// Default search box: `β_j ∈ [−0.9·w_j, 2·max_j w_j]`, which keeps `w_j + β_j > 0`.
    pub fn default_bounds(w: &ClassWeightVector) -> Vec<(f64, f64)> {
        let max = w.values.iter().copied().fold(f64::MIN, f64::max);
        w.values.iter().map(|&wj| (-0.9 * wj, 2.0 * max)).collect()
    }
}

/// `w + β` per class, failing if any entry is not strictly positive.
pub fn combined_weights(w: &ClassWeightVector, beta: Option<&[f64]>) -> Result<Vec<f64>> {
    let combined: Vec<f64> = match beta {
        None => w.values.clone(),
        Some(b) => {
            if b.len() != w.len() {
                return Err(Error::InvalidCounts(format!("{} bias values for {} classes", b.len(), w.len())));
            }
            w.values.iter().zip(b).map(|(wj, bj)| wj + bj).collect()
        }
    };
    for (class, &value) in combined.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveWeight { class, value });
        }
    }
    Ok(combined)
}

fn validate_counts(counts: &[usize]) -> Result<usize> {
    if counts.is_empty() {
        return Err(Error::InvalidCounts("no classes".into()));
    }
    if let Some(j) = counts.iter().position(|&n| n < 1) {
        return Err(Error::InvalidCounts(format!("class {j} has no examples")));
    }
    Ok(counts.iter().sum())
}

/// Effective-number class weights `(1 − α)/(1 − α^{n_j})` with `α = (N − 1)/N`.
pub fn effective_number_weights(counts: &[usize]) -> Result<ClassWeightVector> {
    let total = validate_counts(counts)?;
    if total < 2 {
        return Err(Error::InvalidCounts(format!("total N = {total} must be at least 2")));
    }
    let n = total as f64;
    // 1 − α = 1/N exactly; 1 − α^{n_j} = −expm1(n_j·ln(1 − 1/N)).
    let log_alpha = (-1.0 / n).ln_1p();
    let values = counts
        .iter()
        .map(|&nj| if nj == 1 { 1.0 } else { (1.0 / n) / -(nj as f64 * log_alpha).exp_m1() })
        .collect();
    Ok(ClassWeightVector { values, scheme: WeightScheme::EffectiveNumber })
}

/// `n_j/N` when `inverse` is false, `N/(k·n_j)` when true.
pub fn frequency_weights(counts: &[usize], inverse: bool) -> Result<ClassWeightVector> {
    let total = validate_counts(counts)? as f64;
    let k = counts.len() as f64;
    let (values, scheme) = if inverse {
        (counts.iter().map(|&nj| total / (k * nj as f64)).collect(), WeightScheme::InverseFrequency)
    } else {
        (counts.iter().map(|&nj| nj as f64 / total).collect(), WeightScheme::LiteralFrequency)
    };
    Ok(ClassWeightVector { values, scheme })
}

/// Finite joint distribution as a `classes × features` table, `p[y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    pub p: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let width = p.first().map_or(0, Vec::len);
        if p.is_empty() || width == 0 || p.iter().any(|row| row.len() != width) {
            return Err(Error::SupportMismatch("joint table must be a non-empty rectangle".into()));
        }
        if p.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::SupportMismatch("joint probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = p.iter().flatten().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::SupportMismatch(format!("joint sums to {sum}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn marginal(&self, y: usize) -> f64 {
        self.p[y].iter().sum()
    }
}

/// Per-cell `|P_t(x,y)/P_c(x,y) − (w_y + β_{x,y})|`, with `w_y = P_t(y)/P_c(y)`
/// and `β_{x,y} = w_y·(P_t(x|y)/P_c(x|y) − 1)`. Cells outside both supports
/// report zero.
pub fn decomposition_check(annotated: &DiscreteJoint, test: &DiscreteJoint) -> Result<Vec<Vec<f64>>> {
    if annotated.p.len() != test.p.len() || annotated.p[0].len() != test.p[0].len() {
        return Err(Error::SupportMismatch("joint tables differ in shape".into()));
    }
    let mut residuals = Vec::with_capacity(annotated.p.len());
    for (y, (row_c, row_t)) in annotated.p.iter().zip(&test.p).enumerate() {
        let (marg_c, marg_t) = (annotated.marginal(y), test.marginal(y));
        let mut out = Vec::with_capacity(row_c.len());
        for (x, (&pc, &pt)) in row_c.iter().zip(row_t).enumerate() {
            if pc == 0.0 {
                if pt > 0.0 {
                    return Err(Error::SupportMismatch(format!("P_c(x={x}, y={y}) = 0 but P_t > 0")));
                }
                out.push(0.0);
                continue;
            }
            let w = marg_t / marg_c;
            let beta = w * ((pt / marg_t) / (pc / marg_c) - 1.0);
            let beta = if marg_t == 0.0 { -w } else { beta };
            out.push((pt / pc - (w + beta)).abs());
        }
        residuals.push(out);
    }
    Ok(residuals)
}

/// Decomposition terms `(w_y, β_{x,y})` for inspection.
pub fn decompose(annotated: &DiscreteJoint, test: &DiscreteJoint) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    decomposition_check(annotated, test)?;
    let w: Vec<f64> = (0..annotated.p.len()).map(|y| test.marginal(y) / annotated.marginal(y)).collect();
    let beta = annotated
        .p
        .iter()
        .zip(&test.p)
        .enumerate()
        .map(|(y, (rc, rt))| {
            let (mc, mt) = (annotated.marginal(y), test.marginal(y));
            rc.iter()
                .zip(rt)
                .map(|(&pc, &pt)| if pc == 0.0 || mt == 0.0 { 0.0 } else { w[y] * ((pt / mt) / (pc / mc) - 1.0) })
                .collect()
        })
        .collect();
    Ok((w, beta))
}
