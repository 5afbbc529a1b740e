//! Batched MALLS: per-class uncertainty quotas shaped by a medial marginal,
//! importance weights re-estimated on the labeled set every round, and
//! optional posterior regularization.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelOracle};
use crate::error::{Error, Result};
use crate::harness::metrics::compute_metrics;
use crate::learner::{
    argmax, posterior_regularize, predict_all, train_ensemble, train_weighted, uncertainty_score, Classifier, Ensemble,
    LinearModel, TrainHyper, UncertaintyMeasure,
};
use crate::marginal::{class_counts, ImportanceWeights, LabelMarginal, ShiftKind};
use crate::rng::RngStream;
use crate::run::{LabelAccounting, RoundRecord, RunResult};
use crate::sampling::{make_medial, MedialPolicy};
use crate::shift::{estimate_shift, RllsOptions, SMALL_SAMPLE_LAMBDA_REG};

const TAG_TRAIN: u64 = 11;
const TAG_RANDOM: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    /// Number of batches `T`.
    pub rounds: usize,
    /// Batch size `B`.
    pub batch_size: usize,
    /// `Source` disables the per-class quotas (plain global top-B).
    pub medial: MedialPolicy,
    pub measure: UncertaintyMeasure,
    pub use_posterior_reg: bool,
    /// Train on examples weighted by `r(label)`.
    pub use_weighted_training: bool,
    pub use_iterative_reweight: bool,
    /// Estimate/retrain passes per round when iterative reweighting is on.
    pub n_iter: usize,
    /// Keep `r = 1` throughout.
    pub unit_weights: bool,
    pub lambda_reg: f64,
    pub hyper: TrainHyper,
    /// Members trained when `measure` is ensemble disagreement.
    pub ensemble_size: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            batch_size: 50,
            medial: MedialPolicy::Uniform,
            measure: UncertaintyMeasure::Entropy,
            use_posterior_reg: true,
            use_weighted_training: true,
            use_iterative_reweight: true,
            n_iter: 2,
            unit_weights: false,
            lambda_reg: SMALL_SAMPLE_LAMBDA_REG,
            hyper: TrainHyper::default(),
            ensemble_size: 5,
        }
    }
}

impl BatchConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.batch_size == 0 {
            return Err(Error::Config("rounds and batch_size must be at least 1".into()));
        }
        if self.use_iterative_reweight && self.n_iter == 0 {
            return Err(Error::Config("n_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.rounds * self.batch_size
    }
}

/// A pool item with its (possibly regularized) predicted label and score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub predicted: usize,
    pub score: f64,
}

/// Largest-remainder apportionment of `b` slots by `p`; leftover slots go
/// to the largest remainders, lower class first on ties.
pub fn largest_remainder_quotas(p: &LabelMarginal, b: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.probs().iter().map(|q| q * b as f64).collect();
    let mut quotas: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..p.k()).collect();
    order.sort_by(|&a, &c| {
        let (ra, rc) = (raw[a] - raw[a].floor(), raw[c] - raw[c].floor());
        rc.partial_cmp(&ra).unwrap_or(Ordering::Equal).then(a.cmp(&c))
    });
    for &y in order.iter().take(b.saturating_sub(assigned)) {
        quotas[y] += 1;
    }
    quotas
}

fn by_score_desc(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// Picks `min(b, |candidates|)` items. With `p_med`, class `y` gets its
/// largest-remainder quota of the most uncertain items predicted `y`, and
/// unfilled slots go to the most uncertain leftovers; without it, the
/// global top-`b`. Ties go to the lower index.
pub fn select_by_quota(candidates: &[Candidate], p_med: Option<&LabelMarginal>, b: usize) -> Vec<usize> {
    let want = b.min(candidates.len());
    let mut ranked = candidates.to_vec();
    ranked.sort_by(by_score_desc);
    let Some(p_med) = p_med else {
        return ranked.iter().take(want).map(|c| c.index).collect();
    };
    let mut quotas = largest_remainder_quotas(p_med, want);
    let mut taken = vec![false; ranked.len()];
    let mut out = Vec::with_capacity(want);
    for (pos, c) in ranked.iter().enumerate() {
        if c.predicted < quotas.len() && quotas[c.predicted] > 0 {
            quotas[c.predicted] -= 1;
            taken[pos] = true;
            out.push(c.index);
        }
    }
    for (pos, c) in ranked.iter().enumerate() {
        if out.len() == want {
            break;
        }
        if !taken[pos] {
            out.push(c.index);
        }
    }
    out
}

/// Classifier whose posterior is reweighted by `r`.
pub struct Regularized<'a> {
    pub inner: &'a dyn Classifier,
    pub r: &'a ImportanceWeights,
}

impl Classifier for Regularized<'_> {
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        posterior_regularize(&self.inner.predict_proba(x)?, self.r)
    }
}

/// Scores the `available` pool items.
pub fn score_candidates(
    pool: &Dataset,
    available: &[usize],
    model: &dyn Classifier,
    ensemble: Option<&Ensemble>,
    r: &ImportanceWeights,
    measure: UncertaintyMeasure,
    use_posterior_reg: bool,
) -> Result<Vec<Candidate>> {
    available
        .iter()
        .map(|&i| {
            let x = pool.row(i);
            let mut p = model.predict_proba(x)?;
            if use_posterior_reg {
                p = posterior_regularize(&p, r)?;
            }
            let score = match measure {
                UncertaintyMeasure::EnsembleDisagreement => ensemble
                    .ok_or(Error::RequiresEnsemble("ensemble_disagreement"))?
                    .disagreement(x)?,
                m => uncertainty_score(&p, m)?,
            };
            Ok(Candidate {
                index: i,
                predicted: argmax(&p),
                score,
            })
        })
        .collect()
}

/// Scores `available` with `model` and selects a batch of `b`.
/// `p_med = None` means no quotas.
#[allow(clippy::too_many_arguments)]
pub fn select_batch(
    pool: &Dataset,
    available: &[usize],
    model: &dyn Classifier,
    r: &ImportanceWeights,
    p_med: Option<&LabelMarginal>,
    b: usize,
    measure: UncertaintyMeasure,
    use_posterior_reg: bool,
) -> Result<Vec<usize>> {
    let cands = score_candidates(pool, available, model, None, r, measure, use_posterior_reg)?;
    Ok(select_by_quota(&cands, p_med, b))
}

/// Current hypothesis: a single model, or an ensemble when the uncertainty
/// measure needs one.
#[derive(Debug, Clone)]
pub enum Phi {
    Single(LinearModel),
    Ensemble(Ensemble),
}

impl Phi {
    fn ensemble(&self) -> Option<&Ensemble> {
        match self {
            Phi::Ensemble(e) => Some(e),
            Phi::Single(_) => None,
        }
    }

    pub fn into_model(self) -> LinearModel {
        match self {
            Phi::Single(m) => m,
            Phi::Ensemble(e) => e.best_member().clone(),
        }
    }
}

impl Classifier for Phi {
    fn k(&self) -> usize {
        match self {
            Phi::Single(m) => m.k(),
            Phi::Ensemble(e) => e.k(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Phi::Single(m) => m.predict_proba(x),
            Phi::Ensemble(e) => e.predict_proba(x),
        }
    }
}

fn fit(
    data: &Dataset,
    weights: &[f64],
    measure: UncertaintyMeasure,
    size: usize,
    hyper: &TrainHyper,
    rng: &RngStream,
) -> Result<Phi> {
    if measure == UncertaintyMeasure::EnsembleDisagreement {
        Ok(Phi::Ensemble(train_ensemble(data, weights, size.max(2), hyper, rng)?))
    } else {
        Ok(Phi::Single(train_weighted(data, weights, hyper, rng)?))
    }
}

/// RLLS weights from `model`'s confusion on `labeled` and its prediction
/// marginal on `target`.
pub fn estimate_weights_on(
    model: &dyn Classifier,
    labeled: &Dataset,
    target: &Dataset,
    lambda_reg: f64,
) -> Result<ImportanceWeights> {
    let preds = predict_all(model, labeled)?;
    let target_preds = predict_all(model, target)?;
    let est = estimate_shift(
        &preds,
        labeled.labels(),
        &target_preds,
        labeled.k(),
        &RllsOptions {
            lambda_reg,
            renormalize: false,
        },
    )?;
    Ok(est.r.with_kind(ShiftKind::MedialToTarget))
}

pub struct BatchedInputs<'a> {
    pub warm: &'a Dataset,
    /// Labels are only read through the oracle on selection.
    pub pool: &'a Dataset,
    /// Used through model predictions only.
    pub target_unlabeled: &'a Dataset,
    pub eval: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRun {
    pub result: RunResult,
    pub model: LinearModel,
    /// Labeled class counts, warm start included.
    pub labeled_counts: Vec<usize>,
}

impl BatchRun {
    /// One JSON object per round.
    pub fn to_jsonl(&self) -> Result<String> {
        rounds_to_jsonl(&self.result)
    }
}

pub fn rounds_to_jsonl(result: &RunResult) -> Result<String> {
    let mut out = String::new();
    for rr in &result.rounds {
        let m = |key: &str| rr.metrics.get(key).copied();
        let line = serde_json::json!({
            "round": rr.round,
            "labels_total": rr.labels_spent,
            "acc": m("accuracy"),
            "macro_f1": m("macro_f1"),
            "weighted_f1": m("weighted_f1"),
            "l2_to_uniform": m("l2_to_uniform"),
            "l2_to_target": m("l2_to_target"),
            "r_t": rr.r,
        });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

fn metrics_for(model: &dyn Classifier, eval: Option<&Dataset>, counts: &[usize]) -> Result<BTreeMap<String, f64>> {
    match eval {
        Some(test) => Ok(compute_metrics(model, test, counts, &test.marginal()?)?.scalar_map()),
        None => Ok(BTreeMap::new()),
    }
}

fn check_inputs(warm: &Dataset, pool: &Dataset, budget: usize) -> Result<()> {
    if warm.n() < warm.k() {
        return Err(Error::InsufficientData(format!(
            "warm start has {} examples, fewer than k = {}",
            warm.n(),
            warm.k()
        )));
    }
    if pool.k() != warm.k() || pool.d() != warm.d() {
        return Err(Error::DimensionMismatch {
            expected: warm.d(),
            got: pool.d(),
        });
    }
    if budget > pool.n() {
        return Err(Error::InsufficientData(format!(
            "budget {budget} exceeds pool of {}",
            pool.n()
        )));
    }
    Ok(())
}

/// Runs `config.rounds` rounds of batched MALLS.
///
/// Each round estimates `r` on the labeled set, retrains, then selects and
/// labels a batch; a final estimate and retrain follows the last batch.
pub fn run_batched_malls(inputs: &BatchedInputs<'_>, config: &BatchConfig, rng: &RngStream) -> Result<BatchRun> {
    config.validate()?;
    let (warm, pool) = (inputs.warm, inputs.pool);
    check_inputs(warm, pool, config.budget())?;
    let k = warm.k();
    let train_stream = rng.child(TAG_TRAIN);
    let mut fits = 0u64;
    let mut oracle = LabelOracle::new(pool);
    let mut labeled = warm.clone();
    let mut available: Vec<usize> = (0..pool.n()).collect();
    let mut r = ImportanceWeights::ones(k, ShiftKind::MedialToTarget);
    let mut rounds = Vec::with_capacity(config.rounds + 1);
    let mut acct = LabelAccounting {
        budget: config.budget(),
        ..Default::default()
    };

    let mut phi = fit(
        &labeled,
        &vec![1.0; labeled.n()],
        config.measure,
        config.ensemble_size,
        &config.hyper,
        &train_stream.child(fits),
    )?;
    fits += 1;
    let mut queried_last: Vec<usize> = Vec::new();

    for round in 0..=config.rounds {
        let passes = if config.use_iterative_reweight {
            config.n_iter
        } else {
            1
        };
        for _ in 0..passes {
            if !config.unit_weights {
                r = estimate_weights_on(&phi, &labeled, inputs.target_unlabeled, config.lambda_reg)?;
            }
            let w: Vec<f64> = if config.use_weighted_training {
                labeled.labels().iter().map(|&y| r.get(y)).collect()
            } else {
                vec![1.0; labeled.n()]
            };
            phi = fit(
                &labeled,
                &w,
                config.measure,
                config.ensemble_size,
                &config.hyper,
                &train_stream.child(fits),
            )?;
            fits += 1;
        }

        let counts = labeled.class_counts();
        let metrics = if config.use_posterior_reg {
            metrics_for(&Regularized { inner: &phi, r: &r }, inputs.eval, &counts)?
        } else {
            metrics_for(&phi, inputs.eval, &counts)?
        };
        rounds.push(RoundRecord {
            round,
            labels_spent: acct.labels_spent(),
            queried_ids: std::mem::take(&mut queried_last),
            metrics,
            r: r.as_slice().to_vec(),
        });
        if round == config.rounds {
            break;
        }

        let p_med = if config.medial.is_source() {
            None
        } else {
            let preds_pool: Vec<usize> = available
                .iter()
                .map(|&i| phi.predict(pool.row(i)))
                .collect::<Result<_>>()?;
            let p_src = smoothed(&preds_pool, k)?;
            let p_trg = smoothed(&predict_all(&phi, inputs.target_unlabeled)?, k)?;
            Some(make_medial(&config.medial, &p_src, &p_trg)?)
        };
        let cands = score_candidates(
            pool,
            &available,
            &phi,
            phi.ensemble(),
            &r,
            config.measure,
            config.use_posterior_reg,
        )?;
        let batch = select_by_quota(&cands, p_med.as_ref(), config.batch_size);
        for &i in &batch {
            oracle.reveal(i);
        }
        acct.drawn += batch.len();
        acct.queried += batch.len();
        labeled = labeled.concat(&pool.subset(&batch, "batch"), "labeled")?;
        remove_all(&mut available, &batch);
        queried_last = batch;
    }

    let labeled_counts = labeled.class_counts();
    Ok(BatchRun {
        result: RunResult {
            rounds,
            final_weights: r,
            accounting: acct,
            config_echo: serde_json::to_value(config)?,
        },
        model: phi.into_model(),
        labeled_counts,
    })
}

fn smoothed(labels: &[usize], k: usize) -> Result<LabelMarginal> {
    let counts = class_counts(labels, k)?;
    LabelMarginal::from_masses(&counts.iter().map(|&c| c as f64 + 1.0).collect::<Vec<_>>())
}

fn remove_all(available: &mut Vec<usize>, taken: &[usize]) {
    let mut gone = taken.to_vec();
    gone.sort_unstable();
    available.retain(|i| gone.binary_search(i).is_err());
}

/// Batch acquisition rule for the unshaped baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Global top-B by uncertainty, unit weights.
    Uncertainty(UncertaintyMeasure),
    /// Uniformly random batches.
    Random,
}

/// Plain pool-based active learning over the same round structure as
/// [`run_batched_malls`]: unit training weights, no quotas, no weights.
pub fn run_baseline(
    inputs: &BatchedInputs<'_>,
    baseline: Baseline,
    config: &BatchConfig,
    rng: &RngStream,
) -> Result<BatchRun> {
    config.validate()?;
    let (warm, pool) = (inputs.warm, inputs.pool);
    check_inputs(warm, pool, config.budget())?;
    let k = warm.k();
    let ones = ImportanceWeights::ones(k, ShiftKind::MedialToTarget);
    let train_stream = rng.child(TAG_TRAIN);
    let mut pick_rng = rng.child(TAG_RANDOM).rng();
    let measure = match baseline {
        Baseline::Uncertainty(m) => m,
        Baseline::Random => UncertaintyMeasure::Entropy,
    };
    let mut fits = 0u64;
    let mut labeled = warm.clone();
    let mut available: Vec<usize> = (0..pool.n()).collect();
    let mut rounds = Vec::new();
    let mut spent = 0;
    let mut last: Vec<usize> = Vec::new();
    let mut phi = fit(
        &labeled,
        &vec![1.0; labeled.n()],
        measure,
        config.ensemble_size,
        &config.hyper,
        &train_stream.child(fits),
    )?;
    fits += 1;

    for round in 0..=config.rounds {
        phi = fit(
            &labeled,
            &vec![1.0; labeled.n()],
            measure,
            config.ensemble_size,
            &config.hyper,
            &train_stream.child(fits),
        )?;
        fits += 1;
        rounds.push(RoundRecord {
            round,
            labels_spent: spent,
            queried_ids: std::mem::take(&mut last),
            metrics: metrics_for(&phi, inputs.eval, &labeled.class_counts())?,
            r: ones.as_slice().to_vec(),
        });
        if round == config.rounds {
            break;
        }
        let batch: Vec<usize> = match baseline {
            Baseline::Uncertainty(m) => {
                let mut scored: Vec<(usize, f64)> = Vec::with_capacity(available.len());
                for &i in &available {
                    let x = pool.row(i);
                    let s = match m {
                        UncertaintyMeasure::EnsembleDisagreement => {
                            phi.ensemble().expect("ensemble fitted").disagreement(x)?
                        }
                        _ => uncertainty_score(&phi.predict_proba(x)?, m)?,
                    };
                    scored.push((i, s));
                }
                scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
                scored.iter().take(config.batch_size).map(|&(i, _)| i).collect()
            }
            Baseline::Random => {
                let n = config.batch_size.min(available.len());
                let mut pos: Vec<usize> = sample(&mut pick_rng, available.len(), n).into_vec();
                pos.sort_unstable();
                pos.iter().map(|&p| available[p]).collect()
            }
        };
        spent += batch.len();
        labeled = labeled.concat(&pool.subset(&batch, "batch"), "labeled")?;
        remove_all(&mut available, &batch);
        last = batch;
    }
    let labeled_counts = labeled.class_counts();
    Ok(BatchRun {
        result: RunResult {
            rounds,
            final_weights: ones,
            accounting: LabelAccounting {
                budget: config.budget(),
                drawn: spent,
                queried: spent,
                ..Default::default()
            },
            config_echo: serde_json::to_value(config)?,
        },
        model: phi.into_model(),
        labeled_counts,
    })
}
