//! Metrics, the class-conditional KL diagnostic and cross-run aggregation.

mod kl;

pub use kl::{assign_clusters, kl_conditional_diagnostic, kmeans, KlConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Recall per class; 0 for classes absent from the references.
    pub per_class_accuracy: Vec<f64>,
    pub macro_f1: f64,
    /// Number of references per class.
    pub support: Vec<usize>,
}

pub fn classification_metrics(predictions: &[usize], references: &[usize], classes: usize) -> Result<ClassificationMetrics> {
    if predictions.len() != references.len() || predictions.is_empty() {
        return Err(Error::LengthMismatch { predictions: predictions.len(), references: references.len() });
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&p, &r) in predictions.iter().zip(references) {
        for l in [p, r] {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        predicted[p] += 1;
        support[r] += 1;
        if p == r {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let per_class_accuracy: Vec<f64> =
        (0..classes).map(|c| if support[c] == 0 { 0.0 } else { tp[c] as f64 / support[c] as f64 }).collect();
    let f1: Vec<f64> = (0..classes)
        .map(|c| {
            // 2PR/(P+R) = 2·tp/(predicted + support); 0 when both are empty.
            let denom = predicted[c] + support[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / predictions.len() as f64,
        per_class_accuracy,
        macro_f1: f1.iter().sum::<f64>() / classes as f64,
        support,
    })
}

/// Lowercase, replace punctuation with nothing, drop the articles a/an/the,
/// and collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 when the normalized strings are equal, else 0.
pub fn exact_match(prediction: &str, reference: &str) -> f64 {
    if normalize_answer(prediction) == normalize_answer(reference) {
        1.0
    } else {
        0.0
    }
}

/// Mean and unbiased standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = classification_metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.per_class_accuracy, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn all_class_zero_on_balanced_binary() {
        let m = classification_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        // Class 0: P = 1/2, R = 1, F1 = 2/3. Class 1: F1 = 0.
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero_f1() {
        let m = classification_metrics(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(m.macro_f1, 0.5);
    }

    #[test]
    fn overall_is_support_weighted_recall() {
        let refs: Vec<usize> = [vec![0; 10], vec![1; 10]].concat();
        let mut preds = refs.clone();
        preds[9] = 1; // class 0: 9/10
        for p in preds.iter_mut().skip(11) {
            *p = 0; // class 1: 1/10
        }
        let m = classification_metrics(&preds, &refs, 2).unwrap();
        assert!((m.per_class_accuracy[0] - 0.9).abs() < 1e-15);
        assert!((m.per_class_accuracy[1] - 0.1).abs() < 1e-15);
        assert!((m.accuracy - 0.5).abs() < 1e-15);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(classification_metrics(&[0], &[0, 1], 2), Err(Error::LengthMismatch { .. })));
        assert!(matches!(classification_metrics(&[2], &[0], 2), Err(Error::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn exact_match_normalization() {
        assert_eq!(exact_match("Jan Koum", "jan koum"), 1.0);
        assert_eq!(exact_match("Paris", "London"), 0.0);
        assert_eq!(exact_match("the answer", "answer"), 1.0);
        assert_eq!(exact_match("The Eiffel Tower.", "eiffel tower"), 1.0);
        assert_eq!(exact_match("", "eiffel tower"), 0.0);
        assert_eq!(normalize_answer("  An  apple, a DAY "), "apple day");
    }

    #[test]
    fn unbiased_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn metrics_ignore_pair_order(
                pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40),
                rot in 0usize..40,
            ) {
                let (p, r): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
                let mut shuffled = pairs.clone();
                let n = shuffled.len();
                shuffled.rotate_left(rot % n);
                shuffled.reverse();
                let (ps, rs): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
                let a = classification_metrics(&p, &r, 4).unwrap();
                let b = classification_metrics(&ps, &rs, 4).unwrap();
                prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
                prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a.macro_f1));
                let weighted: f64 = a.per_class_accuracy.iter().zip(&a.support)
                    .map(|(acc, &s)| acc * s as f64).sum::<f64>() / n as f64;
                prop_assert!((weighted - a.accuracy).abs() < 1e-12);
            }
        }
    }
}
