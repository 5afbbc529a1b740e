//! Test-set metrics and labeled-set balance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learner::{predict_all, Classifier};
use crate::marginal::LabelMarginal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub l2_to_uniform: f64,
    pub l2_to_target: f64,
    pub per_class_accuracy: Vec<f64>,
}

impl MetricsReport {
    /// The scalar metrics keyed by name.
    pub fn scalar_map(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("accuracy".to_string(), self.accuracy),
            ("macro_f1".to_string(), self.macro_f1),
            ("weighted_f1".to_string(), self.weighted_f1),
            ("l2_to_uniform".to_string(), self.l2_to_uniform),
            ("l2_to_target".to_string(), self.l2_to_target),
        ])
    }
}

/// Per-class F1 from predictions; classes never predicted and never present
/// score 0.
pub fn per_class_f1(truth: &[usize], preds: &[usize], k: usize) -> Vec<f64> {
    let mut tp = vec![0usize; k];
    let mut pred_n = vec![0usize; k];
    let mut true_n = vec![0usize; k];
    for (&y, &p) in truth.iter().zip(preds) {
        true_n[y] += 1;
        pred_n[p] += 1;
        if y == p {
            tp[y] += 1;
        }
    }
    (0..k)
        .map(|c| {
            let denom = pred_n[c] + true_n[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

/// Metrics from precomputed predictions.
pub fn metrics_from_predictions(
    truth: &[usize],
    preds: &[usize],
    k: usize,
    labeled_counts: &[usize],
    target: &LabelMarginal,
) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let n = truth.len() as f64;
    let correct = truth.iter().zip(preds).filter(|(a, b)| a == b).count();
    let f1 = per_class_f1(truth, preds, k);
    let mut true_n = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (&y, &p) in truth.iter().zip(preds) {
        true_n[y] += 1;
        if y == p {
            hits[y] += 1;
        }
    }
    let weighted_f1 = f1.iter().zip(&true_n).map(|(f, &c)| f * c as f64).sum::<f64>() / n;
    let per_class_accuracy = hits
        .iter()
        .zip(&true_n)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect();
    let total: usize = labeled_counts.iter().sum();
    let (l2_to_uniform, l2_to_target) = if total == 0 {
        (0.0, 0.0)
    } else {
        let lab = LabelMarginal::from_masses(&labeled_counts.iter().map(|&c| c as f64).collect::<Vec<_>>())?;
        (lab.l2(&LabelMarginal::uniform(k)), lab.l2(target))
    };
    Ok(MetricsReport {
        accuracy: correct as f64 / n,
        macro_f1: f1.iter().sum::<f64>() / k as f64,
        weighted_f1,
        l2_to_uniform,
        l2_to_target,
        per_class_accuracy,
    })
}

/// Evaluates `model` on `test` and compares the labeled-set class balance
/// against uniform and `target_marginal`.
pub fn compute_metrics(
    model: &dyn Classifier,
    test: &Dataset,
    labeled_counts: &[usize],
    target_marginal: &LabelMarginal,
) -> Result<MetricsReport> {
    let preds = predict_all(model, test)?;
    metrics_from_predictions(test.labels(), &preds, test.k(), labeled_counts, target_marginal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_arithmetic() {
        let m = metrics_from_predictions(&[1, 1, 0, 0], &[1, 0, 0, 0], 2, &[5, 5], &LabelMarginal::uniform(2)).unwrap();
        assert_eq!(m.accuracy, 0.75);
        let f1 = per_class_f1(&[1, 1, 0, 0], &[1, 0, 0, 0], 2);
        assert!((f1[0] - 0.8).abs() < 1e-15);
        assert!((f1[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(m.l2_to_uniform, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2];
        let m = metrics_from_predictions(&t, &t, 3, &[1, 1, 1], &LabelMarginal::uniform(3)).unwrap();
        assert_eq!((m.accuracy, m.macro_f1, m.weighted_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = metrics_from_predictions(&[0, 1], &[0, 1], 3, &[], &LabelMarginal::uniform(3)).unwrap();
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
