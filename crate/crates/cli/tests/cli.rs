use std::path::Path;
use std::process::{Command, Output};

fn malls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malls")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = malls(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"{
    "strategies": ["batched-malls", "vanilla-uncertainty", "stream-malls"],
    "seeds": [0, 1],
    "data": {"k": 3, "d": 4, "separation": 2.5},
    "scenario": {"kind": "canonical", "alpha": 1.0},
    "sizes": {"warm": 60, "ulb": 300, "test": 120},
    "batch": {"rounds": 2, "batch_size": 10, "hyper": {"epochs": 10}},
    "stream": {"budget": 20, "ensemble_size": 3, "hyper": {"epochs": 10}, "medial": {"kind": "square_root"}},
    "blackbox": {"epochs": 10}
}"#;

fn write_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn data_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&[
        "gen-data", "--k", "3", "--d", "2", "--n", "3000", "--seed", "1", "--out", d,
    ]);
    let data = dir.path().join("data.json");
    assert!(dir.path().join("data.csv").exists());
    let split_dir = dir.path().join("split");
    ok(&[
        "shift-split",
        "--data",
        data.to_str().unwrap(),
        "--alpha",
        "1.0",
        "--target-frac",
        "0.3",
        "--out",
        split_dir.to_str().unwrap(),
    ]);
    let info: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(split_dir.join("split.json")).unwrap()).unwrap();
    assert_eq!(info["target_marginal"].as_array().unwrap().len(), 3);

    let w_dir = dir.path().join("weights");
    let stdout = ok(&[
        "estimate-weights",
        "--source",
        split_dir.join("source.json").to_str().unwrap(),
        "--target",
        split_dir.join("target.json").to_str().unwrap(),
        "--out",
        w_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("r = "));
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(w_dir.join("weights.json")).unwrap()).unwrap();
    for key in ["C", "q", "r", "sigma_min", "lambda_reg"] {
        assert!(est.get(key).is_some(), "{key}");
    }
}

#[test]
fn single_runs_write_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let b = dir.path().join("batched");
    ok(&[
        "run-batched",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        b.to_str().unwrap(),
    ]);
    let rounds = std::fs::read_to_string(b.join("rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 3);
    let summary = std::fs::read_to_string(b.join("summary.csv")).unwrap();
    assert!(summary.starts_with("strategy,seed,budget,accuracy,macro_f1,weighted_f1,l2_to_uniform,l2_to_target\n"));

    let s = dir.path().join("stream");
    ok(&[
        "run-stream",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        s.to_str().unwrap(),
    ]);
    let events = std::fs::read_to_string(s.join("events.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(events.lines().last().unwrap()).unwrap();
    assert_eq!(last["summary"], true);
    assert!(last["labels_spent"].as_u64().unwrap() <= 20);

    // Strategies are routed to the matching subcommand.
    assert!(!malls(&[
        "run-stream",
        "--config",
        &cfg,
        "--strategy",
        "random",
        "--out",
        s.to_str().unwrap()
    ])
    .status
    .success());
    assert!(!malls(&[
        "run-batched",
        "--config",
        &cfg,
        "--strategy",
        "nope",
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
}

#[test]
fn single_run_matches_suite_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let suite = dir.path().join("suite");
    let stdout = ok(&["run-suite", "--config", &cfg, "--out", suite.to_str().unwrap()]);
    assert!(stdout.contains("batched-malls"));
    for f in ["summary.csv", "summary_ci.csv", "rounds.jsonl"] {
        assert!(suite.join(f).exists(), "{f}");
    }
    let one = dir.path().join("one");
    ok(&[
        "run-batched",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        one.to_str().unwrap(),
    ]);
    let suite_csv = std::fs::read_to_string(suite.join("summary.csv")).unwrap();
    for line in std::fs::read_to_string(one.join("summary.csv"))
        .unwrap()
        .lines()
        .skip(1)
    {
        assert!(suite_csv.contains(line), "{line}");
    }

    let rep = dir.path().join("report");
    let table = ok(&[
        "report",
        "--input",
        suite.join("summary.csv").to_str().unwrap(),
        "--metric",
        "macro_f1",
        "--out",
        rep.to_str().unwrap(),
    ]);
    assert!(table.lines().count() >= 4);
    assert_eq!(
        std::fs::read_to_string(rep.join("summary_ci.csv")).unwrap(),
        std::fs::read_to_string(suite.join("summary_ci.csv")).unwrap()
    );
    assert!(!malls(&[
        "report",
        "--input",
        suite.join("summary.csv").to_str().unwrap(),
        "--metric",
        "bogus"
    ])
    .status
    .success());
}

#[test]
fn file_based_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for (name, n, seed) in [("warm", "60", "1"), ("pool", "200", "2"), ("test", "120", "3")] {
        let sub = dir.path().join(name);
        ok(&[
            "gen-data",
            "--k",
            "3",
            "--d",
            "4",
            "--n",
            n,
            "--separation",
            "2.5",
            "--seed",
            seed,
            "--out",
            sub.to_str().unwrap(),
        ]);
    }
    let path = |name: &str| dir.path().join(name).join("data.json").to_str().unwrap().to_string();
    let out = dir.path().join("run");
    ok(&[
        "run-batched",
        "--config",
        &cfg,
        "--warm",
        &path("warm"),
        "--pool",
        &path("pool"),
        "--test",
        &path("test"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("rounds.jsonl").exists());
    assert!(!malls(&["run-batched", "--config", &cfg, "--warm", &path("warm")])
        .status
        .success());
}
