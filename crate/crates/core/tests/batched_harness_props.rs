use std::path::PathBuf;

use malls_core::batched::{
    estimate_weights_on, run_baseline, run_batched_malls, select_by_quota, Baseline, BatchConfig, BatchedInputs,
    Candidate, Regularized,
};
use malls_core::harness::experiment::{ci_csv, mean_ci, read_summary_csv, summary_csv, CI_HEADER, SUMMARY_HEADER};
use malls_core::harness::scenario::ScenarioKind;
use malls_core::harness::{
    dirichlet_shift_split, gen_gaussian_mixture, make_scenario, run_experiment, sample_dirichlet, write_outputs,
    ExperimentConfig, ShiftScenario, SplitSizes, Strategy,
};
use malls_core::learner::train_weighted;
use malls_core::{Classifier, Dataset, ImportanceWeights, LabelMarginal, RngStream, ShiftKind, TrainHyper};
use proptest::prelude::*;

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"));
    ExperimentConfig::load(path).unwrap()
}

fn quick() -> TrainHyper {
    TrainHyper {
        epochs: 10,
        ..TrainHyper::default()
    }
}

proptest! {
    #[test]
    fn quota_selection_is_distinct_and_sized(
        items in prop::collection::vec((0usize..4, 0.0f64..1.0), 0..80),
        b in 0usize..100,
        use_quota in any::<bool>(),
    ) {
        let cands: Vec<Candidate> = items.iter().enumerate().map(|(i, &(p, s))| Candidate { index: i, predicted: p, score: s }).collect();
        let med = LabelMarginal::uniform(4);
        let picked = select_by_quota(&cands, use_quota.then_some(&med), b);
        prop_assert_eq!(picked.len(), b.min(cands.len()));
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), picked.len());
    }
}

/// Predicts the class stored in the first feature.
struct Oracle(usize);

impl Classifier for Oracle {
    fn k(&self) -> usize {
        self.0
    }

    fn predict_proba(&self, x: &[f64]) -> malls_core::Result<Vec<f64>> {
        let mut p = vec![0.0; self.0];
        p[x[0] as usize] = 1.0;
        Ok(p)
    }
}

fn labeled_rows(labels: &[usize], k: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y as f64]).collect();
    Dataset::from_rows(&rows, labels.to_vec(), k, "rows").unwrap()
}

#[test]
fn perfect_predictor_weights_are_a_fixed_point() {
    let labeled = labeled_rows(&[0, 0, 0, 0, 1, 1, 2, 2, 2, 2], 3);
    let target = labeled_rows(&[0, 1, 1, 1, 2, 2, 2, 2, 2, 2], 3);
    let r = estimate_weights_on(&Oracle(3), &labeled, &target, 0.0).unwrap();
    let want = [0.1 / 0.4, 0.3 / 0.2, 0.6 / 0.4];
    for (y, w) in want.iter().enumerate() {
        assert!((r.get(y) - w).abs() < 1e-9, "{:?}", r.as_slice());
    }
    // Reweighting the posterior of a perfect predictor leaves predictions unchanged.
    let reg = Regularized {
        inner: &Oracle(3),
        r: &r,
    };
    let again = estimate_weights_on(&reg, &labeled, &target, 0.0).unwrap();
    assert_eq!(r.as_slice(), again.as_slice());
}

#[test]
fn unit_weights_regularization_is_identity() {
    let data = gen_gaussian_mixture(3, 2, 90, 2.0, &RngStream::from_seed(1)).unwrap();
    let m = train_weighted(&data, &vec![1.0; data.n()], &quick(), &RngStream::from_seed(0)).unwrap();
    let ones = ImportanceWeights::ones(3, ShiftKind::MedialToTarget);
    let reg = Regularized { inner: &m, r: &ones };
    for x in data.rows() {
        let (a, b) = (m.predict_proba(x).unwrap(), reg.predict_proba(x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-15));
    }
}

fn small_split() -> (Dataset, Dataset, Dataset) {
    let all = gen_gaussian_mixture(4, 3, 400, 3.0, &RngStream::from_seed(3)).unwrap();
    let idx = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    (
        all.subset(&idx(0, 100), "warm"),
        all.subset(&idx(100, 140), "pool"),
        all.subset(&idx(140, 400), "test"),
    )
}

#[test]
fn one_round_over_the_whole_pool_labels_everything() {
    let (warm, pool, test) = small_split();
    let cfg = BatchConfig {
        rounds: 1,
        batch_size: pool.n(),
        hyper: quick(),
        ..BatchConfig::default()
    };
    let inputs = BatchedInputs {
        warm: &warm,
        pool: &pool,
        target_unlabeled: &test,
        eval: Some(&test),
    };
    let run = run_batched_malls(&inputs, &cfg, &RngStream::from_seed(0)).unwrap();
    let mut ids = run.result.queried_ids();
    ids.sort_unstable();
    assert_eq!(ids, (0..pool.n()).collect::<Vec<_>>());
    assert_eq!(run.labeled_counts.iter().sum::<usize>(), warm.n() + pool.n());
    run.result.validate().unwrap();
}

#[test]
fn random_baseline_draws_distinct_pool_items() {
    let (warm, pool, test) = small_split();
    let cfg = BatchConfig {
        rounds: 3,
        batch_size: 10,
        hyper: quick(),
        ..BatchConfig::default()
    };
    let inputs = BatchedInputs {
        warm: &warm,
        pool: &pool,
        target_unlabeled: &test,
        eval: None,
    };
    let run = run_baseline(&inputs, Baseline::Random, &cfg, &RngStream::from_seed(4)).unwrap();
    let ids = run.result.queried_ids();
    assert_eq!(ids.len(), 30);
    assert!(ids.iter().all(|&i| i < pool.n()));
    run.result.validate().unwrap();
}

#[test]
fn labeled_set_moves_toward_uniform() {
    let out = run_experiment(&config("label_balance")).unwrap();
    let malls = out.final_mean(Strategy::BatchedMalls, "l2_to_uniform").unwrap();
    let vanilla = out.final_mean(Strategy::VanillaUncertainty, "l2_to_uniform").unwrap();
    assert_eq!(out.final_values(Strategy::BatchedMalls, "l2_to_uniform").len(), 10);
    assert!(malls < vanilla, "malls {malls} vanilla {vanilla}");
}

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
            "strategies": ["batched-malls", "random"],
            "seeds": [0, 1, 2],
            "data": {"k": 3, "d": 4, "separation": 2.5},
            "scenario": {"kind": "canonical", "alpha": 1.0},
            "sizes": {"warm": 60, "ulb": 80, "test": 120},
            "batch": {"rounds": 2, "batch_size": 10, "hyper": {"epochs": 10}}
        }"#,
    )
    .unwrap()
}

#[test]
fn outputs_are_reproducible_and_consistent() {
    let cfg = tiny_config();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let text = summary_csv(&a.rows);
    assert_eq!(text, summary_csv(&b.rows));
    assert_eq!(text.lines().next().unwrap(), SUMMARY_HEADER);
    assert_eq!(ci_csv(&a.ci).lines().next().unwrap(), CI_HEADER);
    assert_eq!(read_summary_csv(&text).unwrap(), a.rows);

    // Every interval matches a recomputation from the per-seed rows.
    for ci in &a.ci {
        let vals: Vec<f64> = a
            .rows
            .iter()
            .filter(|r| r.strategy == ci.strategy && r.budget == ci.budget)
            .map(|r| r.metrics[&ci.metric])
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert_eq!(ci.n_seeds, vals.len());
        assert!((ci.mean - mean).abs() < 1e-12);
        assert!((ci.ci_high - (mean + 1.96 * sd / n.sqrt())).abs() < 1e-12);
        assert!((ci.ci_low - (mean - 1.96 * sd / n.sqrt())).abs() < 1e-12);
        assert_eq!(mean_ci(&vals).0, ci.mean);
    }

    let dir = tempfile::tempdir().unwrap();
    write_outputs(&a, dir.path()).unwrap();
    for f in ["summary.csv", "summary_ci.csv", "rounds.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("summary.csv")).unwrap(), text);
}

#[test]
fn dirichlet_concentration_controls_spread() {
    let mut rng = RngStream::from_seed(0).rng();
    for _ in 0..20 {
        let p = sample_dirichlet(1e6, 10, &mut rng).unwrap();
        assert!(p.tv(&LabelMarginal::uniform(10)) < 0.02);
    }
    let peaked = (0..50)
        .filter(|_| {
            sample_dirichlet(0.1, 10, &mut rng)
                .unwrap()
                .probs()
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                > 0.3
        })
        .count();
    assert!(peaked >= 25, "{peaked}");
}

#[test]
fn separation_sets_difficulty() {
    let acc = |k: usize, d: usize, n: usize, sep: f64| {
        let train = gen_gaussian_mixture(k, d, n, sep, &RngStream::from_seed(1)).unwrap();
        let test = gen_gaussian_mixture(k, d, n, sep, &RngStream::from_seed(2)).unwrap();
        malls_core::harness::experiment::no_shift_accuracy(&train, &test, &quick(), &RngStream::from_seed(0)).unwrap()
    };
    assert!((acc(4, 5, 10_000, 0.0) - 0.25).abs() <= 0.05);
    assert!(acc(2, 2, 2000, 10.0) > 0.99);
}

#[test]
fn scenario_marginals_match_regime() {
    let base = gen_gaussian_mixture(5, 3, 20_000, 2.0, &RngStream::from_seed(5)).unwrap();
    let sizes = SplitSizes {
        warm: 1000,
        ulb: 2000,
        test: 2000,
    };
    let uniform = LabelMarginal::uniform(5);
    for (kind, seed) in [
        (ScenarioKind::ImbalancedSource, 1),
        (ScenarioKind::ImbalancedTarget, 2),
        (ScenarioKind::Canonical, 3),
    ] {
        let sc = ShiftScenario {
            kind,
            alpha: Some(2.0),
            marginals: None,
        };
        let s = make_scenario(&base, &sc, &sizes, &RngStream::from_seed(seed)).unwrap();
        let m = |d: &Dataset| d.marginal().unwrap();
        match kind {
            ScenarioKind::ImbalancedSource => {
                assert!(m(&s.test).tv(&uniform) < 0.01);
                assert!(m(&s.ulb).tv(&s.true_marginals["ulb"]) < 0.01);
            }
            ScenarioKind::ImbalancedTarget => {
                assert!(m(&s.ulb).tv(&uniform) < 0.01);
                assert!(m(&s.test).tv(&s.true_marginals["test"]) < 0.01);
            }
            _ => assert!(m(&s.ulb).tv(&m(&s.test)) < 0.01),
        }
    }
}

#[test]
fn shift_split_realizes_drawn_marginal() {
    let data = gen_gaussian_mixture(4, 2, 4000, 2.0, &RngStream::from_seed(6)).unwrap();
    let split = dirichlet_shift_split(&data, 1.0, &RngStream::from_seed(7), 0.3).unwrap();
    assert_eq!(split.target.n(), 1200);
    assert!(split.target.marginal().unwrap().tv(&split.target_marginal) < 0.01);
    assert_eq!(
        split.source.n()
            + split
                .target_indices
                .iter()
                .collect::<std::collections::HashSet<_>>()
                .len(),
        4000
    );
}
