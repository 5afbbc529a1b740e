//! Streaming MALLS: proxy-label subsampling, a one-off holdout weight
//! estimate, then IWAL-CAL query decisions driven by an ensemble proxy of
//! the version space.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelOracle};
use crate::error::{Error, Result};
use crate::harness::metrics::compute_metrics;
use crate::learner::{predict_all, train_ensemble, Classifier, Ensemble, LinearModel, TrainHyper};
use crate::marginal::{class_counts, ImportanceWeights, LabelMarginal, ShiftKind};
use crate::rng::RngStream;
use crate::run::{LabelAccounting, RoundRecord, RunResult};
use crate::sampling::{make_filter, make_medial, MedialPolicy, SubsampleFilter};
use crate::shift::{estimate_shift, RllsOptions, SMALL_SAMPLE_LAMBDA_REG};

// Child stream tags. Each source of randomness gets its own stream so that
// switching a correction off never shifts the draws of another component.
pub(crate) const TAG_ORDER: u64 = 1;
pub(crate) const TAG_FILTER: u64 = 2;
pub(crate) const TAG_COIN: u64 = 3;
pub(crate) const TAG_ENSEMBLE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IwalCalParams {
    #[serde(rename = "C0")]
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for IwalCalParams {
    fn default() -> Self {
        Self {
            c0: 8.0,
            c1: 5.0 + 2.0 * std::f64::consts::SQRT_2,
            c2: 5.0,
        }
    }
}

impl IwalCalParams {
    pub fn with_c0(c0: f64) -> Self {
        Self {
            c0,
            ..Default::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.c0 > 0.0) || !self.c0.is_finite() {
            return Err(Error::Config(format!("C0 must be positive, got {}", self.c0)));
        }
        Ok(())
    }
}

/// IWAL-CAL query probability for gap `g` at step `t`.
///
/// With `eps = C0 ln t / (t - 1)`, returns 1 when `g <= sqrt(eps) + eps`,
/// otherwise `1 / u^2` for the positive root `u` of
/// `c2 eps u^2 + c1 sqrt(eps) u + ((1 - c1) sqrt(eps) + (1 - c2) eps - g) = 0`.
pub fn iwalcal_probability(g: f64, t: usize, params: &IwalCalParams) -> Result<f64> {
    if t < 2 {
        return Err(Error::Config(format!("query probability needs t >= 2, got {t}")));
    }
    if !(g >= 0.0) {
        return Err(Error::Config(format!("gap must be nonnegative, got {g}")));
    }
    params.check()?;
    let eps = params.c0 * (t as f64).ln() / (t as f64 - 1.0);
    let se = eps.sqrt();
    if g <= se + eps {
        return Ok(1.0);
    }
    let a = params.c2 * eps;
    let b = params.c1 * se;
    let c = (1.0 - params.c1) * se + (1.0 - params.c2) * eps - g;
    // c < 0 here, so the roots have opposite signs; this form avoids
    // cancellation in -b + sqrt(disc).
    let disc = b * b - 4.0 * a * c;
    let u = -2.0 * c / (b + disc.sqrt());
    Ok((1.0 / (u * u)).min(1.0))
}

/// Result of comparing the best member against its best disagreeing rival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisagreementGap {
    Gap(f64),
    /// Every member predicts the same label.
    Unanimous,
}

/// Importance-weighted error of every ensemble member on a labeled set,
/// kept incrementally as per-class mistake counts.
#[derive(Debug, Clone)]
pub struct MemberErrors {
    wrong: Vec<Vec<usize>>,
    n: usize,
}

impl MemberErrors {
    pub fn new(ensemble: &Ensemble, labeled: &[(&[f64], usize)]) -> Result<Self> {
        let mut me = Self {
            wrong: vec![vec![0; ensemble.k()]; ensemble.len()],
            n: 0,
        };
        for &(x, y) in labeled {
            me.push(ensemble, x, y)?;
        }
        Ok(me)
    }

    pub fn push(&mut self, ensemble: &Ensemble, x: &[f64], y: usize) -> Result<()> {
        for (m, counts) in ensemble.members().iter().zip(self.wrong.iter_mut()) {
            if m.predict(x)? != y {
                counts[y] += 1;
            }
        }
        self.n += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `err(h, r) = (1/|S|) sum_{(x,y) in S} r(y) 1[h(x) != y]` per member.
    pub fn errors(&self, r: &ImportanceWeights) -> Vec<f64> {
        self.wrong
            .iter()
            .map(|counts| {
                if self.n == 0 {
                    0.0
                } else {
                    counts
                        .iter()
                        .enumerate()
                        .map(|(y, &c)| r.get(y) * c as f64)
                        .sum::<f64>()
                        / self.n as f64
                }
            })
            .collect()
    }
}

/// Gap between the lowest-error member and the lowest-error member that
/// predicts differently on `x`, with errors as given.
pub fn disagreement_gap(ensemble: &Ensemble, errors: &[f64], x: &[f64]) -> Result<DisagreementGap> {
    let votes = ensemble.votes(x)?;
    let best = argmin(errors, |_| true).expect("ensemble has members");
    let rival = argmin(errors, |i| votes[i] != votes[best]);
    Ok(match rival {
        Some(j) => DisagreementGap::Gap((errors[j] - errors[best]).max(0.0)),
        None => DisagreementGap::Unanimous,
    })
}

fn argmin(v: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if keep(i) && best.is_none_or(|b| x < v[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    /// Label budget `n`, holdout included, warm start excluded.
    pub budget: usize,
    /// Fraction of the budget spent on the weight-estimation holdout.
    pub holdout_frac: f64,
    pub medial: MedialPolicy,
    pub params: IwalCalParams,
    pub ensemble_size: usize,
    pub hyper: TrainHyper,
    pub retrain_every: usize,
    /// Query probability used when every member agrees.
    pub p_floor: f64,
    pub lambda_reg: f64,
    /// Keep `r = 1` instead of estimating it from the holdout.
    pub unit_weights: bool,
    /// Re-estimate `r` from the labeled set at every retrain.
    pub reestimate_on_retrain: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            budget: 500,
            holdout_frac: 0.1,
            medial: MedialPolicy::Uniform,
            params: IwalCalParams::default(),
            ensemble_size: 8,
            hyper: TrainHyper::default(),
            retrain_every: 10,
            p_floor: 0.01,
            lambda_reg: SMALL_SAMPLE_LAMBDA_REG,
            unit_weights: false,
            reestimate_on_retrain: false,
        }
    }
}

impl StreamConfig {
    pub fn holdout_size(&self) -> usize {
        (self.holdout_frac * self.budget as f64 - 1e-9).ceil().max(0.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::Config(format!(
                "holdout fraction {} not in [0, 1)",
                self.holdout_frac
            )));
        }
        if self.budget < self.holdout_size() + 1 {
            return Err(Error::Config(format!(
                "budget {} leaves no room after a holdout of {}",
                self.budget,
                self.holdout_size()
            )));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        if self.retrain_every == 0 {
            return Err(Error::Config("retrain_every must be at least 1".into()));
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1.0) {
            return Err(Error::Config(format!("p_floor {} not in (0, 1]", self.p_floor)));
        }
        self.params.check()
    }
}

/// One streamed datapoint that reached the query decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub t: usize,
    pub index: usize,
    pub queried: bool,
    #[serde(rename = "P_t")]
    pub p_t: f64,
    /// `None` when the ensemble was unanimous.
    #[serde(rename = "G_t")]
    pub g_t: Option<f64>,
    pub budget_used: usize,
}

pub struct StreamInputs<'a> {
    pub warm: &'a Dataset,
    /// Source pool; labels are only read through the oracle on query.
    pub unlabeled: &'a Dataset,
    /// Blackbox predictions on an unlabeled target sample.
    pub target_preds: &'a [usize],
    pub blackbox: &'a LinearModel,
    /// Labeled target test set for per-round metrics.
    pub eval: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRun {
    pub result: RunResult,
    pub events: Vec<StreamEvent>,
    pub model: LinearModel,
    pub p_med: LabelMarginal,
    pub filter: SubsampleFilter,
    pub holdout_ids: Vec<usize>,
}

impl StreamRun {
    /// Event log followed by a summary record, one JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": true,
            "accounting": self.result.accounting,
            "labels_spent": self.result.accounting.labels_spent(),
            "r": self.result.final_weights.as_slice(),
            "p_med": self.p_med.probs(),
            "metrics": self.result.final_metrics(),
        });
        out.push_str(&serde_json::to_string(&summary)?);
        out.push('\n');
        Ok(out)
    }
}

/// Laplace-smoothed empirical marginal, so every class keeps support.
fn smoothed_marginal(labels: &[usize], k: usize) -> Result<LabelMarginal> {
    let counts = class_counts(labels, k)?;
    LabelMarginal::from_masses(&counts.iter().map(|&c| c as f64 + 1.0).collect::<Vec<_>>())
}

struct Learner<'a> {
    xs: Vec<&'a [f64]>,
    ys: Vec<usize>,
    d: usize,
    k: usize,
}

impl<'a> Learner<'a> {
    fn dataset(&self) -> Result<Dataset> {
        let features: Vec<f64> = self.xs.iter().flat_map(|x| x.iter().copied()).collect();
        Dataset::new(features, self.ys.clone(), self.d, self.k, "labeled")
    }

    fn fit(
        &self,
        r: &ImportanceWeights,
        size: usize,
        hyper: &TrainHyper,
        rng: &RngStream,
    ) -> Result<(Ensemble, MemberErrors)> {
        let data = self.dataset()?;
        let w: Vec<f64> = self.ys.iter().map(|&y| r.get(y)).collect();
        let ens = train_ensemble(&data, &w, size, hyper, rng)?;
        let pairs: Vec<(&[f64], usize)> = self.xs.iter().copied().zip(self.ys.iter().copied()).collect();
        let errs = MemberErrors::new(&ens, &pairs)?;
        Ok((ens, errs))
    }
}

fn round_metrics(
    model: &dyn Classifier,
    eval: Option<&Dataset>,
    labeled: &[usize],
    k: usize,
) -> Result<BTreeMap<String, f64>> {
    let Some(test) = eval else {
        return Ok(BTreeMap::new());
    };
    let counts = class_counts(labeled, k)?;
    let report = compute_metrics(model, test, &counts, &test.marginal()?)?;
    Ok(report.scalar_map())
}

/// Runs streaming MALLS over `inputs.unlabeled` in a seeded random order.
pub fn run_stream_malls(inputs: &StreamInputs<'_>, config: &StreamConfig, rng: &RngStream) -> Result<StreamRun> {
    config.validate()?;
    let warm = inputs.warm;
    let pool = inputs.unlabeled;
    if warm.is_empty() {
        return Err(Error::Empty("warm start set"));
    }
    let (k, d) = (warm.k(), warm.d());
    if pool.k() != k || pool.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: pool.d(),
        });
    }

    let proxies = predict_all(inputs.blackbox, pool)?;
    let p_src = smoothed_marginal(&proxies, k)?;
    let p_trg = smoothed_marginal(inputs.target_preds, k)?;
    let p_med = make_medial(&config.medial, &p_src, &p_trg)?;
    let mut filter = make_filter(&p_src, &p_med)?;
    filter.predictor_id = "blackbox".into();

    let mut order: Vec<usize> = (0..pool.n()).collect();
    order.shuffle(&mut rng.child(TAG_ORDER).rng());
    let mut filter_rng = rng.child(TAG_FILTER).rng();
    let mut coin_rng = rng.child(TAG_COIN).rng();
    let ens_stream = rng.child(TAG_ENSEMBLE);
    let mut fits = 0u64;

    let mut oracle = LabelOracle::new(pool);
    let mut learner = Learner {
        xs: warm.rows().collect(),
        ys: warm.labels().to_vec(),
        d,
        k,
    };
    let mut r = ImportanceWeights::ones(k, ShiftKind::MedialToTarget);
    let (mut ensemble, mut errs) = learner.fit(&r, config.ensemble_size, &config.hyper, &ens_stream.child(fits))?;
    fits += 1;

    let n_hold = config.holdout_size();
    let mut holdout_ids = Vec::with_capacity(n_hold);
    let mut holdout_labels = Vec::with_capacity(n_hold);
    let mut acct = LabelAccounting {
        budget: config.budget,
        ..Default::default()
    };
    let mut events = Vec::new();
    let mut rounds = Vec::new();
    let mut pending: Vec<usize> = Vec::new();
    let mut since_retrain = 0usize;
    let mut t = warm.n();

    let estimate = |labeled_preds: &[usize], labels: &[usize]| -> Result<ImportanceWeights> {
        let est = estimate_shift(
            labeled_preds,
            labels,
            inputs.target_preds,
            k,
            &RllsOptions {
                lambda_reg: config.lambda_reg,
                renormalize: false,
            },
        )?;
        Ok(est.r.with_kind(ShiftKind::MedialToTarget))
    };

    for &i in &order {
        if acct.labels_spent() >= config.budget {
            break;
        }
        acct.drawn += 1;
        if !filter.accept(proxies[i], &mut filter_rng) {
            acct.filtered_out += 1;
            continue;
        }
        if holdout_ids.len() < n_hold {
            holdout_labels.push(oracle.reveal(i));
            holdout_ids.push(i);
            acct.holdout += 1;
            if holdout_ids.len() == n_hold {
                if !config.unit_weights {
                    let preds: Vec<usize> = holdout_ids.iter().map(|&j| proxies[j]).collect();
                    r = estimate(&preds, &holdout_labels)?;
                    (ensemble, errs) = learner.fit(&r, config.ensemble_size, &config.hyper, &ens_stream.child(fits))?;
                    fits += 1;
                }
                rounds.push(RoundRecord {
                    round: rounds.len(),
                    labels_spent: acct.labels_spent(),
                    queried_ids: holdout_ids.clone(),
                    metrics: round_metrics(ensemble.best_member(), inputs.eval, &learner.ys, k)?,
                    r: r.as_slice().to_vec(),
                });
            }
            continue;
        }

        t += 1;
        let x = pool.row(i);
        let (p_t, g_t) = if t < 2 || errs.is_empty() {
            (1.0, Some(0.0))
        } else {
            let e = errs.errors(&r);
            match disagreement_gap(&ensemble, &e, x)? {
                DisagreementGap::Gap(g) => (iwalcal_probability(g, t, &config.params)?, Some(g)),
                DisagreementGap::Unanimous => (config.p_floor, None),
            }
        };
        let coin: f64 = coin_rng.random();
        let queried = coin < p_t;
        if queried {
            let y = oracle.reveal(i);
            acct.queried += 1;
            learner.xs.push(x);
            learner.ys.push(y);
            errs.push(&ensemble, x, y)?;
            pending.push(i);
            since_retrain += 1;
        } else {
            acct.rejected += 1;
        }
        events.push(StreamEvent {
            t,
            index: i,
            queried,
            p_t,
            g_t,
            budget_used: acct.labels_spent(),
        });
        let done = acct.labels_spent() >= config.budget;
        if since_retrain == config.retrain_every || (done && since_retrain > 0) {
            since_retrain = 0;
            if config.reestimate_on_retrain && !config.unit_weights {
                let labeled = learner.dataset()?;
                let preds = predict_all(ensemble.best_member(), &labeled)?;
                r = estimate(&preds, labeled.labels())?;
            }
            (ensemble, errs) = learner.fit(&r, config.ensemble_size, &config.hyper, &ens_stream.child(fits))?;
            fits += 1;
            rounds.push(RoundRecord {
                round: rounds.len(),
                labels_spent: acct.labels_spent(),
                queried_ids: std::mem::take(&mut pending),
                metrics: round_metrics(ensemble.best_member(), inputs.eval, &learner.ys, k)?,
                r: r.as_slice().to_vec(),
            });
        }
    }
    if !pending.is_empty() || rounds.is_empty() {
        rounds.push(RoundRecord {
            round: rounds.len(),
            labels_spent: acct.labels_spent(),
            queried_ids: std::mem::take(&mut pending),
            metrics: round_metrics(ensemble.best_member(), inputs.eval, &learner.ys, k)?,
            r: r.as_slice().to_vec(),
        });
    }

    let model = ensemble.best_member().clone();
    let result = RunResult {
        rounds,
        final_weights: r,
        accounting: acct,
        config_echo: serde_json::to_value(config)?,
    };
    Ok(StreamRun {
        result,
        events,
        model,
        p_med,
        filter,
        holdout_ids,
    })
}

/// Plain IWAL-CAL with a bootstrap-ensemble version space and unweighted
/// errors, for comparison against [`run_stream_malls`]. Returns the
/// per-point query decisions.
pub fn run_iwal_cal(
    warm: &Dataset,
    pool: &Dataset,
    config: &StreamConfig,
    rng: &RngStream,
) -> Result<Vec<StreamEvent>> {
    config.validate()?;
    if warm.is_empty() {
        return Err(Error::Empty("warm start set"));
    }
    let k = warm.k();
    let ones = ImportanceWeights::ones(k, ShiftKind::SourceToTarget);
    let mut order: Vec<usize> = (0..pool.n()).collect();
    order.shuffle(&mut rng.child(TAG_ORDER).rng());
    let mut coins = rng.child(TAG_COIN).rng();
    let ens_stream = rng.child(TAG_ENSEMBLE);

    let mut labeled = warm.clone();
    let mut fits = 0;
    let mut ensemble = train_ensemble(
        &labeled,
        &vec![1.0; labeled.n()],
        config.ensemble_size,
        &config.hyper,
        &ens_stream.child(fits),
    )?;
    fits += 1;
    let mut events = Vec::new();
    let mut queried = 0;
    let mut new_since_fit = 0;
    let mut t = warm.n();
    for &i in &order {
        if queried >= config.budget {
            break;
        }
        t += 1;
        let x = pool.row(i);
        let errors: Vec<f64> = ensemble
            .members()
            .iter()
            .map(|m| crate::learner::weighted_error(m, &labeled, &ones))
            .collect::<Result<_>>()?;
        let (p, g) = if t < 2 {
            (1.0, Some(0.0))
        } else {
            match disagreement_gap(&ensemble, &errors, x)? {
                DisagreementGap::Gap(g) => (iwalcal_probability(g, t, &config.params)?, Some(g)),
                DisagreementGap::Unanimous => (config.p_floor, None),
            }
        };
        let ask = coins.random::<f64>() < p;
        if ask {
            queried += 1;
            new_since_fit += 1;
            let one = pool.subset(&[i], "labeled");
            labeled = labeled.concat(&one, "labeled")?;
        }
        events.push(StreamEvent {
            t,
            index: i,
            queried: ask,
            p_t: p,
            g_t: g,
            budget_used: queried,
        });
        if new_since_fit == config.retrain_every || (queried >= config.budget && new_since_fit > 0) {
            new_since_fit = 0;
            ensemble = train_ensemble(
                &labeled,
                &vec![1.0; labeled.n()],
                config.ensemble_size,
                &config.hyper,
                &ens_stream.child(fits),
            )?;
            fits += 1;
        }
    }
    Ok(events)
}
