use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::ImportanceWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    Entropy,
    Margin,
    EnsembleDisagreement,
}

/// Reweights a posterior by `r` and renormalizes: `p(y) r(y) / sum p r`.
pub fn posterior_regularize(probs: &[f64], r: &ImportanceWeights) -> Result<Vec<f64>> {
    if probs.len() != r.k() {
        return Err(Error::DimensionMismatch {
            expected: r.k(),
            got: probs.len(),
        });
    }
    let total: f64 = probs.iter().zip(r.as_slice()).map(|(p, w)| p * w).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidMarginal(
            "posterior has no mass on positively weighted classes".into(),
        ));
    }
    Ok(probs.iter().zip(r.as_slice()).map(|(p, w)| p * w / total).collect())
}

/// Higher means more uncertain. Entropy is in nats; margin is
/// `1 - (p_top1 - p_top2)`.
pub fn uncertainty_score(probs: &[f64], measure: UncertaintyMeasure) -> Result<f64> {
    match measure {
        UncertaintyMeasure::Entropy => Ok(-probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()),
        UncertaintyMeasure::Margin => {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in probs {
                if p > first {
                    second = first;
                    first = p;
                } else if p > second {
                    second = p;
                }
            }
            if second == f64::NEG_INFINITY {
                second = 0.0;
            }
            Ok(1.0 - (first - second))
        }
        UncertaintyMeasure::EnsembleDisagreement => Err(Error::RequiresEnsemble("ensemble_disagreement")),
    }
}
