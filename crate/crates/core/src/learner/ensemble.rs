use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::linear::{train_weighted, LinearModel, TrainHyper};
use super::Classifier;

/// Bootstrap ensemble of softmax models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<LinearModel>,
    /// Weighted 0/1 training error of each member on the full training set.
    member_errors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bootstrap: Vec<Vec<usize>>,
}

impl Ensemble {
    pub fn new(members: Vec<LinearModel>, member_errors: Vec<f64>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config("an ensemble needs at least two members".into()));
        }
        if member_errors.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                got: member_errors.len(),
            });
        }
        let (k, d) = (members[0].k(), members[0].d());
        if members.iter().any(|m| m.k() != k || m.d() != d) {
            return Err(Error::Config("ensemble members have different shapes".into()));
        }
        Ok(Self {
            members,
            member_errors,
            bootstrap: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[LinearModel] {
        &self.members
    }

    pub fn member_errors(&self) -> &[f64] {
        &self.member_errors
    }

    /// Resample indices each member was trained on.
    pub fn bootstrap_indices(&self) -> &[Vec<usize>] {
        &self.bootstrap
    }

    /// Member with the lowest training error (first on ties).
    pub fn best_member(&self) -> &LinearModel {
        let mut best = 0;
        for (i, &e) in self.member_errors.iter().enumerate() {
            if e < self.member_errors[best] {
                best = i;
            }
        }
        &self.members[best]
    }

    /// Hard prediction of every member.
    pub fn votes(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.members.iter().map(|m| m.predict(x)).collect()
    }

    /// Fraction of members disagreeing with the plurality vote
    /// (ties resolved towards the lower class index).
    pub fn disagreement(&self, x: &[f64]) -> Result<f64> {
        let votes = self.votes(x)?;
        let mut counts = vec![0usize; self.k()];
        for &v in &votes {
            counts[v] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        Ok(1.0 - top as f64 / votes.len() as f64)
    }
}

impl Classifier for Ensemble {
    fn k(&self) -> usize {
        self.members[0].k()
    }

    /// Average of the member posteriors.
    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut avg = vec![0.0; self.k()];
        for m in &self.members {
            for (a, p) in avg.iter_mut().zip(m.predict_proba(x)?) {
                *a += p;
            }
        }
        let e = self.members.len() as f64;
        avg.iter_mut().for_each(|a| *a /= e);
        Ok(avg)
    }
}

/// Trains `size` members in parallel, each on its own bootstrap resample of
/// `data` (size `n`, with replacement). Member `m` draws from `rng.child(m)`,
/// so results do not depend on thread scheduling.
pub fn train_ensemble(
    data: &Dataset,
    weights: &[f64],
    size: usize,
    hyper: &TrainHyper,
    rng: &RngStream,
) -> Result<Ensemble> {
    if size < 2 {
        return Err(Error::Config("an ensemble needs at least two members".into()));
    }
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if weights.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: weights.len(),
        });
    }
    let n = data.n();
    let trained: Vec<(LinearModel, f64, Vec<usize>)> = (0..size as u64)
        .into_par_iter()
        .map(|m| {
            let stream = rng.child(m);
            let mut g = stream.rng();
            let idx: Vec<usize> = (0..n).map(|_| g.random_range(0..n)).collect();
            let sample = data.subset(&idx, data.split_name());
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let model = train_weighted(&sample, &w, hyper, &stream.child(1))?;
            let err = train_error(&model, data, weights)?;
            Ok((model, err, idx))
        })
        .collect::<Result<_>>()?;
    let mut members = Vec::with_capacity(size);
    let mut errors = Vec::with_capacity(size);
    let mut bootstrap = Vec::with_capacity(size);
    for (m, e, idx) in trained {
        members.push(m);
        errors.push(e);
        bootstrap.push(idx);
    }
    let mut ens = Ensemble::new(members, errors)?;
    ens.bootstrap = bootstrap;
    Ok(ens)
}

fn train_error(model: &LinearModel, data: &Dataset, weights: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, x) in data.rows().enumerate() {
        if model.predict(x)? != data.label(i) {
            total += weights[i];
        }
    }
    Ok(total / data.n() as f64)
}
