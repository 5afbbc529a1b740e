//! Weighted softmax regression, bootstrap ensembles and uncertainty scores.

mod ensemble;
mod linear;
mod uncertainty;

pub use ensemble::{train_ensemble, Ensemble};
pub use linear::{loss_and_grad, train_weighted, LinearModel, TrainHyper, TrainMeta};
pub use uncertainty::{posterior_regularize, uncertainty_score, UncertaintyMeasure};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::marginal::ImportanceWeights;

/// Anything that maps a feature vector to class probabilities.
pub trait Classifier: Sync {
    fn k(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Most probable class; ties go to the lowest index.
    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Hard predictions for every row of `data`.
pub fn predict_all(model: &dyn Classifier, data: &Dataset) -> Result<Vec<usize>> {
    data.rows().map(|x| model.predict(x)).collect()
}

/// `(1/n) * sum_i r(y_i) * 1[h(x_i) != y_i]`.
pub fn weighted_error(model: &dyn Classifier, data: &Dataset, r: &ImportanceWeights) -> Result<f64> {
    if data.is_empty() {
        return Err(crate::error::Error::Empty("dataset"));
    }
    let mut total = 0.0;
    for (i, x) in data.rows().enumerate() {
        let y = data.label(i);
        if model.predict(x)? != y {
            total += r.get(y);
        }
    }
    Ok(total / data.n() as f64)
}
