use malls_core::harness::gen_gaussian_mixture;
use malls_core::learner::{predict_all, train_weighted};
use malls_core::sampling::{buffer_subsample, expected_yield_rate, filter_subsample, make_filter, make_medial};
use malls_core::stream::{iwalcal_probability, run_stream_malls, IwalCalParams, StreamConfig, StreamInputs};
use malls_core::{LabelMarginal, MedialPolicy, RngStream, TrainHyper};
use proptest::prelude::*;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn filter_probabilities_are_normalized(src in simplex(4), med in simplex(4)) {
        let (src, med) = (LabelMarginal::new(src).unwrap(), LabelMarginal::new(med).unwrap());
        let f = make_filter(&src, &med).unwrap();
        let max = f.accept_probs().iter().cloned().fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
        // Accepted mass is proportional to the medial marginal.
        let mass: Vec<f64> = (0..4).map(|y| src.get(y) * f.accept_probs()[y]).collect();
        let total: f64 = mass.iter().sum();
        prop_assert!((total - expected_yield_rate(&src, &f)).abs() < 1e-12);
        for (y, m) in mass.iter().enumerate() {
            prop_assert!((m / total - med.get(y)).abs() < 1e-9);
        }
    }

    #[test]
    fn buffer_meets_quotas(labels in prop::collection::vec(0usize..3, 1..300), n in 0usize..200, seed in 0u64..50) {
        let med = LabelMarginal::new(vec![0.5, 0.3, 0.2]).unwrap();
        let s = buffer_subsample(&labels, &med, n, &RngStream::from_seed(seed)).unwrap();
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        for y in 0..3 {
            let quota = (n as f64 * med.get(y)).round_ties_even() as usize;
            let got = s.indices.iter().filter(|&&i| labels[i] == y).count();
            prop_assert_eq!(got + s.shortfall.get(&y).copied().unwrap_or(0), quota);
        }
    }

    #[test]
    fn filter_preserves_stream_order(labels in prop::collection::vec(0usize..2, 1..200), want in 1usize..50, seed in 0u64..50) {
        let f = make_filter(&LabelMarginal::new(vec![0.8, 0.2]).unwrap(), &LabelMarginal::uniform(2)).unwrap();
        let order: Vec<usize> = (0..labels.len()).rev().collect();
        let kept = filter_subsample(order.iter().copied(), &labels, &f, &RngStream::from_seed(seed), want);
        prop_assert!(kept.len() <= want);
        prop_assert!(kept.windows(2).all(|w| w[0] > w[1]));
        // Minority items are always accepted, so an unfilled request kept all of them.
        if kept.len() < want {
            for &i in &order {
                if labels[i] == 1 {
                    prop_assert!(kept.contains(&i));
                }
            }
        }
    }

    #[test]
    fn query_probability_monotone(g in 0.0f64..3.0, dg in 0.0f64..1.0, t in 2usize..100_000, dt in 0usize..1000, c0 in 0.01f64..16.0) {
        let params = IwalCalParams::with_c0(c0);
        let p = iwalcal_probability(g, t, &params).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(iwalcal_probability(g + dg, t, &params).unwrap() <= p + 1e-15);
        prop_assert!(iwalcal_probability(g, t + dt, &params).unwrap() <= p + 1e-15);
    }
}

#[test]
fn medial_policies() {
    let src = LabelMarginal::new(vec![0.64, 0.36]).unwrap();
    let trg = LabelMarginal::new(vec![0.36, 0.64]).unwrap();
    let sq = make_medial(&MedialPolicy::SquareRoot, &src, &trg).unwrap();
    assert!((sq.get(0) - 0.5).abs() < 1e-12);
    assert_eq!(make_medial(&MedialPolicy::Source, &src, &trg).unwrap(), src);
    assert_eq!(make_medial(&MedialPolicy::Target, &src, &trg).unwrap(), trg);
}

struct Fixture {
    warm: malls_core::Dataset,
    pool: malls_core::Dataset,
    blackbox: malls_core::LinearModel,
    target_preds: Vec<usize>,
}

fn fixture(pool_n: usize) -> Fixture {
    let all = gen_gaussian_mixture(3, 4, 300 + pool_n + 300, 3.0, &RngStream::from_seed(5)).unwrap();
    let idx = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
    let warm = all.subset(&idx(0, 300), "warm");
    let pool = all.subset(&idx(300, 300 + pool_n), "pool");
    let target = all.subset(&idx(300 + pool_n, 600 + pool_n), "target");
    let hyper = TrainHyper {
        epochs: 10,
        ..TrainHyper::default()
    };
    let blackbox = train_weighted(&warm, &vec![1.0; warm.n()], &hyper, &RngStream::from_seed(0)).unwrap();
    let target_preds = predict_all(&blackbox, &target).unwrap();
    Fixture {
        warm,
        pool,
        blackbox,
        target_preds,
    }
}

fn small_config(budget: usize, holdout_frac: f64, c0: f64) -> StreamConfig {
    StreamConfig {
        budget,
        holdout_frac,
        params: IwalCalParams::with_c0(c0),
        ensemble_size: 3,
        hyper: TrainHyper {
            epochs: 10,
            ..TrainHyper::default()
        },
        ..StreamConfig::default()
    }
}

#[test]
fn stream_budget_accounting() {
    let f = fixture(400);
    let cfg = small_config(10, 0.2, 8.0);
    assert_eq!(cfg.holdout_size(), 2);
    let run = run_stream_malls(
        &StreamInputs {
            warm: &f.warm,
            unlabeled: &f.pool,
            target_preds: &f.target_preds,
            blackbox: &f.blackbox,
            eval: None,
        },
        &cfg,
        &RngStream::from_seed(1),
    )
    .unwrap();
    let acc = run.result.accounting;
    run.result.validate().unwrap();
    assert_eq!(acc.holdout, 2);
    assert!(acc.labels_spent() <= 10);
    assert_eq!(run.holdout_ids.len(), 2);
    assert_eq!(acc.queried, run.events.iter().filter(|e| e.queried).count());
    for e in &run.events {
        assert!(e.p_t > 0.0 && e.p_t <= 1.0);
    }
}

#[test]
fn small_c0_skips_points() {
    let f = fixture(400);
    let cfg = small_config(60, 0.1, 0.01);
    let run = run_stream_malls(
        &StreamInputs {
            warm: &f.warm,
            unlabeled: &f.pool,
            target_preds: &f.target_preds,
            blackbox: &f.blackbox,
            eval: None,
        },
        &cfg,
        &RngStream::from_seed(2),
    )
    .unwrap();
    let queried = run.events.iter().filter(|e| e.queried).count();
    assert!(queried < run.events.len());
    assert_eq!(run.result.accounting.queried, queried);
    run.result.validate().unwrap();
}
