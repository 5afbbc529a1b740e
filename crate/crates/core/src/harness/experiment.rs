//! Multi-seed experiment runner and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batched::{run_baseline, run_batched_malls, Baseline, BatchConfig, BatchRun, BatchedInputs};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learner::{predict_all, train_weighted, TrainHyper};
use crate::rng::RngStream;
use crate::run::RunResult;
use crate::sampling::MedialPolicy;
use crate::stream::{run_stream_malls, StreamConfig, StreamInputs, StreamRun};

use super::scenario::{partition_by_counts, split_counts, Scenario, ShiftScenario, SplitSizes};
use super::synth::gen_gaussian_class_counts;

pub const SUMMARY_HEADER: &str = "strategy,seed,budget,accuracy,macro_f1,weighted_f1,l2_to_uniform,l2_to_target";
pub const CI_HEADER: &str = "strategy,budget,metric,mean,ci_low,ci_high,n_seeds";
pub const METRICS: [&str; 5] = ["accuracy", "macro_f1", "weighted_f1", "l2_to_uniform", "l2_to_target"];

const TAG_DATA: u64 = 41;
const TAG_SPLIT: u64 = 42;
const TAG_RUN: u64 = 43;
const TAG_BLACKBOX: u64 = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    VanillaUncertainty,
    StreamMalls,
    BatchedMalls,
    IwOnly,
    SubsampleOnly,
    IwalCal,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::VanillaUncertainty => "vanilla-uncertainty",
            Strategy::StreamMalls => "stream-malls",
            Strategy::BatchedMalls => "batched-malls",
            Strategy::IwOnly => "iw-only",
            Strategy::SubsampleOnly => "subsample-only",
            Strategy::IwalCal => "iwal-cal",
        }
    }

    pub fn is_stream(&self) -> bool {
        matches!(self, Strategy::StreamMalls | Strategy::IwalCal)
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub k: usize,
    pub d: usize,
    pub separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            k: 10,
            d: 20,
            separation: DESK_SEPARATION,
        }
    }
}

/// Mean separation giving roughly 0.85 no-shift test accuracy at the
/// default `k = 10`, `d = 20`.
pub const DESK_SEPARATION: f64 = 2.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: DataConfig,
    pub scenario: ShiftScenario,
    pub sizes: SplitSizes,
    #[serde(default)]
    pub batch: BatchConfig,
    #[serde(default)]
    pub stream: StreamConfig,
    /// Training settings for the blackbox predictor fit on the warm start.
    #[serde(default)]
    pub blackbox: TrainHyper,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies configured".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds configured".into()));
        }
        self.scenario.validate(self.data.k)?;
        let batched = self
            .strategies
            .iter()
            .any(|s| !matches!(s, Strategy::StreamMalls | Strategy::IwalCal));
        if batched && self.batch.budget() > self.sizes.ulb {
            return Err(Error::Config(format!(
                "budget {} exceeds pool of {}",
                self.batch.budget(),
                self.sizes.ulb
            )));
        }
        Ok(())
    }

    /// `|warm| / (|warm| + |pool|)`.
    pub fn warm_ratio(&self) -> f64 {
        self.sizes.warm as f64 / (self.sizes.warm + self.sizes.ulb) as f64
    }
}

/// Generates exactly the data `seed` needs and splits it.
pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let rng = RngStream::from_seed(seed);
    let m = cfg.scenario.draw_marginals(cfg.data.k, &rng)?;
    let counts = split_counts(&m, &cfg.sizes);
    let per_class: Vec<usize> = counts.iter().map(|c| c.iter().sum()).collect();
    let base = gen_gaussian_class_counts(&per_class, cfg.data.d, cfg.data.separation, &rng.child(TAG_DATA))?;
    let (warm, ulb, test) = partition_by_counts(&base, &counts, &rng.child(TAG_SPLIT))?;
    Ok(Scenario {
        warm,
        ulb,
        test,
        true_marginals: BTreeMap::from([
            ("warm".to_string(), m.warm),
            ("ulb".to_string(), m.ulb),
            ("test".to_string(), m.test),
        ]),
    })
}

/// One strategy on one seed's scenario.
pub fn run_strategy(cfg: &ExperimentConfig, strategy: Strategy, scenario: &Scenario, seed: u64) -> Result<RunResult> {
    if strategy.is_stream() {
        Ok(run_stream_strategy(cfg, strategy, scenario, seed)?.result)
    } else {
        Ok(run_batched_strategy(cfg, strategy, scenario, seed)?.result)
    }
}

/// Runs a pool-based strategy, keeping the final model and labeled counts.
pub fn run_batched_strategy(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    scenario: &Scenario,
    seed: u64,
) -> Result<BatchRun> {
    let rng = RngStream::from_seed(seed).child(TAG_RUN);
    let inputs = BatchedInputs {
        warm: &scenario.warm,
        pool: &scenario.ulb,
        target_unlabeled: &scenario.test,
        eval: Some(&scenario.test),
    };
    match strategy {
        Strategy::Random => run_baseline(&inputs, Baseline::Random, &cfg.batch, &rng),
        Strategy::VanillaUncertainty => {
            run_baseline(&inputs, Baseline::Uncertainty(cfg.batch.measure), &cfg.batch, &rng)
        }
        Strategy::BatchedMalls => run_batched_malls(&inputs, &cfg.batch, &rng),
        Strategy::IwOnly => {
            let c = BatchConfig {
                medial: MedialPolicy::Source,
                ..cfg.batch.clone()
            };
            run_batched_malls(&inputs, &c, &rng)
        }
        Strategy::SubsampleOnly => {
            let c = BatchConfig {
                unit_weights: true,
                ..cfg.batch.clone()
            };
            run_batched_malls(&inputs, &c, &rng)
        }
        Strategy::StreamMalls | Strategy::IwalCal => {
            Err(Error::Config(format!("'{}' is a streaming strategy", strategy.name())))
        }
    }
}

/// Runs a streaming strategy with a blackbox trained on the warm start,
/// keeping the per-point event log.
pub fn run_stream_strategy(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    scenario: &Scenario,
    seed: u64,
) -> Result<StreamRun> {
    if !strategy.is_stream() {
        return Err(Error::Config(format!(
            "'{}' is not a streaming strategy",
            strategy.name()
        )));
    }
    let rng = RngStream::from_seed(seed).child(TAG_RUN);
    let blackbox = train_weighted(
        &scenario.warm,
        &vec![1.0; scenario.warm.n()],
        &cfg.blackbox,
        &RngStream::from_seed(seed).child(TAG_BLACKBOX),
    )?;
    let target_preds = predict_all(&blackbox, &scenario.test)?;
    let inputs = StreamInputs {
        warm: &scenario.warm,
        unlabeled: &scenario.ulb,
        target_preds: &target_preds,
        blackbox: &blackbox,
        eval: Some(&scenario.test),
    };
    let c = if strategy == Strategy::IwalCal {
        StreamConfig {
            holdout_frac: 0.0,
            medial: MedialPolicy::Source,
            unit_weights: true,
            ..cfg.stream.clone()
        }
    } else {
        cfg.stream.clone()
    };
    run_stream_malls(&inputs, &c, &rng)
}

/// Summary rows for every evaluated round of one run.
pub fn summary_rows(strategy: Strategy, seed: u64, result: &RunResult) -> Vec<SummaryRow> {
    result
        .rounds
        .iter()
        .filter(|rr| !rr.metrics.is_empty())
        .map(|rr| SummaryRow {
            strategy: strategy.name().to_string(),
            seed,
            budget: rr.labels_spent,
            metrics: rr.metrics.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub seed: u64,
    pub budget: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub strategy: String,
    pub budget: usize,
    pub metric: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<SummaryRow>,
    pub ci: Vec<CiRow>,
    /// `(strategy, seed, result)` in config order.
    pub runs: Vec<(Strategy, u64, RunResult)>,
}

impl ExperimentOutput {
    /// Mean of `metric` at the largest budget reached by `strategy`.
    pub fn final_mean(&self, strategy: Strategy, metric: &str) -> Option<f64> {
        self.ci
            .iter()
            .filter(|c| c.strategy == strategy.name() && c.metric == metric)
            .max_by_key(|c| c.budget)
            .map(|c| c.mean)
    }

    /// Final value of `metric` for each seed of `strategy`.
    pub fn final_values(&self, strategy: Strategy, metric: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|(s, _, _)| *s == strategy)
            .filter_map(|(_, _, r)| r.final_metrics().and_then(|m| m.get(metric).copied()))
            .collect()
    }
}

/// Runs every configured strategy on every seed, seeds in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let per_seed: Vec<Vec<(Strategy, u64, RunResult)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let scenario = build_scenario(cfg, seed)?;
            cfg.strategies
                .iter()
                .map(|&s| Ok((s, seed, run_strategy(cfg, s, &scenario, seed)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut runs: Vec<(Strategy, u64, RunResult)> = per_seed.into_iter().flatten().collect();
    runs.sort_by_key(|(s, seed, _)| {
        (
            cfg.strategies.iter().position(|x| x == s),
            cfg.seeds.iter().position(|x| x == seed),
        )
    });

    let rows: Vec<SummaryRow> = runs
        .iter()
        .flat_map(|(s, seed, r)| summary_rows(*s, *seed, r))
        .collect();
    let ci = confidence_rows(&rows, &cfg.strategies);
    Ok(ExperimentOutput { rows, ci, runs })
}

/// Normal-approximation intervals `mean +- 1.96 sd / sqrt(n)` with the
/// sample standard deviation, per strategy, budget and metric.
pub fn confidence_rows(rows: &[SummaryRow], order: &[Strategy]) -> Vec<CiRow> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let s = order
            .iter()
            .position(|s| s.name() == row.strategy)
            .unwrap_or(usize::MAX);
        for (mi, metric) in METRICS.iter().enumerate() {
            if let Some(&v) = row.metrics.get(*metric) {
                groups.entry((s, row.budget, mi)).or_default().push(v);
            }
        }
    }
    groups
        .into_iter()
        .map(|((s, budget, mi), vals)| {
            let (mean, half) = mean_ci(&vals);
            CiRow {
                strategy: order.get(s).map(|s| s.name().to_string()).unwrap_or_default(),
                budget,
                metric: METRICS[mi].to_string(),
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
                n_seeds: vals.len(),
            }
        })
        .collect()
}

/// Mean and 95% half-width.
pub fn mean_ci(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.strategy, r.seed, r.budget);
        for m in METRICS {
            let _ = write!(out, ",{}", r.metrics.get(m).copied().unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

pub fn ci_csv(rows: &[CiRow]) -> String {
    let mut out = String::from(CI_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.strategy, r.budget, r.metric, r.mean, r.ci_low, r.ci_high, r.n_seeds
        );
    }
    out
}

/// One line per round per run, tagged with strategy and seed.
pub fn rounds_jsonl(output: &ExperimentOutput) -> Result<String> {
    let mut out = String::new();
    for (s, seed, r) in &output.runs {
        for rr in &r.rounds {
            let line = serde_json::json!({
                "strategy": s.name(),
                "seed": seed,
                "round": rr.round,
                "labels_total": rr.labels_spent,
                "metrics": rr.metrics,
                "r_t": rr.r,
            });
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Writes `summary.csv`, `summary_ci.csv` and `rounds.jsonl` into `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("summary.csv", summary_csv(&output.rows)),
        ("summary_ci.csv", ci_csv(&output.ci)),
        ("rounds.jsonl", rounds_jsonl(output)?),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Parses a summary CSV back into rows.
pub fn read_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str| Error::Config(format!("bad {what} in summary row"));
        let mut metrics = BTreeMap::new();
        for (j, m) in METRICS.iter().enumerate() {
            metrics.insert(m.to_string(), field(3 + j).parse::<f64>().map_err(|_| parse_err(m))?);
        }
        rows.push(SummaryRow {
            strategy: field(0).to_string(),
            seed: field(1).parse().map_err(|_| parse_err("seed"))?,
            budget: field(2).parse().map_err(|_| parse_err("budget"))?,
            metrics,
        });
    }
    Ok(rows)
}

/// Held-out accuracy of a model trained on all of `train`; used to
/// calibrate the mixture separation.
pub fn no_shift_accuracy(train: &Dataset, test: &Dataset, hyper: &TrainHyper, rng: &RngStream) -> Result<f64> {
    let m = train_weighted(train, &vec![1.0; train.n()], hyper, rng)?;
    let preds = predict_all(&m, test)?;
    Ok(preds.iter().zip(test.labels()).filter(|(a, b)| a == b).count() as f64 / test.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_matches_hand_computation() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 1.96 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_ci(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Random,
            Strategy::VanillaUncertainty,
            Strategy::StreamMalls,
            Strategy::BatchedMalls,
            Strategy::IwOnly,
            Strategy::SubsampleOnly,
            Strategy::IwalCal,
        ] {
            assert_eq!(Strategy::parse(s.name()).unwrap(), s);
        }
        assert!(Strategy::parse("bogus").is_err());
    }
}
