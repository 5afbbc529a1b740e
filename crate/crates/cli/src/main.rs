use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use malls_core::batched::rounds_to_jsonl;
use malls_core::harness::experiment::{
    build_scenario, ci_csv, confidence_rows, read_summary_csv, run_batched_strategy, run_stream_strategy, summary_csv,
    summary_rows, METRICS,
};
use malls_core::harness::{
    dirichlet_shift_split, gen_gaussian_mixture, run_experiment, write_outputs, ExperimentConfig, Scenario, Strategy,
};
use malls_core::learner::{predict_all, train_weighted};
use malls_core::shift::{estimate_shift, RllsOptions, DEFAULT_LAMBDA_REG};
use malls_core::{load_dataset, save_dataset, RngStream, TrainHyper};
use rand::seq::SliceRandom;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "malls", version, about = "Active learning under label shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Args, Clone)]
struct SplitFiles {
    /// Warm-start dataset manifest; use with --pool and --test instead of a synthetic scenario.
    #[arg(long, requires_all = ["pool", "test"])]
    warm: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture dataset (manifest + CSV).
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
    },
    /// Resample a dataset into a source part and a Dirichlet-shifted target.
    ShiftSplit {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        target_frac: Option<f64>,
    },
    /// Estimate importance weights with a blackbox trained on part of the source.
    EstimateWeights {
        #[command(flatten)]
        common: Common,
        /// Labeled source manifest.
        #[arg(long)]
        source: PathBuf,
        /// Target manifest; labels are ignored.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        /// Fraction of the source used to train the blackbox.
        #[arg(long)]
        train_frac: Option<f64>,
    },
    /// Run one streaming strategy on one seed and write its event log.
    RunStream {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        files: SplitFiles,
        #[arg(long, default_value = "stream-malls")]
        strategy: String,
    },
    /// Run one pool-based strategy on one seed and write its round log.
    RunBatched {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        files: SplitFiles,
        #[arg(long, default_value = "batched-malls")]
        strategy: String,
    },
    /// Run every strategy and seed of an experiment config.
    RunSuite {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a summary CSV: intervals per budget and a final-budget table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Summary CSV written by run-suite, run-stream or run-batched.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
    },
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenConfig {
    k: usize,
    d: usize,
    n: usize,
    separation: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            k: 10,
            d: 20,
            n: 20_000,
            separation: malls_core::harness::experiment::DESK_SEPARATION,
        }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitConfig {
    alpha: f64,
    target_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            target_frac: 0.5,
        }
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WeightsConfig {
    lambda: f64,
    train_frac: f64,
    blackbox: TrainHyper,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA_REG,
            train_frac: 0.5,
            blackbox: TrainHyper::default(),
        }
    }
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn experiment_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().context("--config is required")?;
    Ok(ExperimentConfig::load(path)?)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn scenario(cfg: &ExperimentConfig, files: &SplitFiles, seed: u64) -> Result<Scenario> {
    let (Some(warm), Some(pool), Some(test)) = (&files.warm, &files.pool, &files.test) else {
        return Ok(build_scenario(cfg, seed)?);
    };
    let warm = load_dataset(warm)?;
    let ulb = load_dataset(pool)?;
    let test = load_dataset(test)?;
    let true_marginals = BTreeMap::from([
        ("warm".to_string(), warm.marginal()?),
        ("ulb".to_string(), ulb.marginal()?),
        ("test".to_string(), test.marginal()?),
    ]);
    Ok(Scenario {
        warm,
        ulb,
        test,
        true_marginals,
    })
}

fn gen_data(common: &Common, k: Option<usize>, d: Option<usize>, n: Option<usize>, sep: Option<f64>) -> Result<()> {
    let mut cfg: GenConfig = read_config(common.config.as_deref())?;
    cfg.k = k.unwrap_or(cfg.k);
    cfg.d = d.unwrap_or(cfg.d);
    cfg.n = n.unwrap_or(cfg.n);
    cfg.separation = sep.unwrap_or(cfg.separation);
    let data = gen_gaussian_mixture(cfg.k, cfg.d, cfg.n, cfg.separation, &RngStream::from_seed(common.seed))?;
    create_out(&common.out())?;
    let path = common.out().join("data.json");
    save_dataset(&data, &path)?;
    eprintln!(
        "wrote {} (n = {}, d = {}, k = {})",
        path.display(),
        data.n(),
        data.d(),
        data.k()
    );
    Ok(())
}

fn shift_split(common: &Common, data: &Path, alpha: Option<f64>, frac: Option<f64>) -> Result<()> {
    let mut cfg: SplitConfig = read_config(common.config.as_deref())?;
    cfg.alpha = alpha.unwrap_or(cfg.alpha);
    cfg.target_frac = frac.unwrap_or(cfg.target_frac);
    let base = load_dataset(data)?;
    let split = dirichlet_shift_split(&base, cfg.alpha, &RngStream::from_seed(common.seed), cfg.target_frac)?;
    create_out(&common.out())?;
    save_dataset(&split.source, common.out().join("source.json"))?;
    save_dataset(&split.target, common.out().join("target.json"))?;
    let info = serde_json::json!({
        "alpha": cfg.alpha,
        "target_frac": cfg.target_frac,
        "target_marginal": split.target_marginal,
        "source_marginal": split.source.marginal()?,
        "used_replacement": split.used_replacement,
    });
    write(
        common.out().join("split.json"),
        &(serde_json::to_string_pretty(&info)? + "\n"),
    )
}

fn estimate_weights(
    common: &Common,
    source: &Path,
    target: &Path,
    lambda: Option<f64>,
    frac: Option<f64>,
) -> Result<()> {
    let mut cfg: WeightsConfig = read_config(common.config.as_deref())?;
    cfg.lambda = lambda.unwrap_or(cfg.lambda);
    cfg.train_frac = frac.unwrap_or(cfg.train_frac);
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) {
        bail!("train_frac must lie in (0, 1)");
    }
    let source = load_dataset(source)?;
    let target = load_dataset(target)?;
    let cut = ((source.n() as f64) * cfg.train_frac).round() as usize;
    if cut == 0 || cut >= source.n() {
        bail!("source too small to split at train_frac {}", cfg.train_frac);
    }
    let rng = RngStream::from_seed(common.seed);
    let mut order: Vec<usize> = (0..source.n()).collect();
    order.shuffle(&mut rng.child(1).rng());
    let train = source.subset(&order[..cut], "train");
    let held = source.subset(&order[cut..], "held");
    let blackbox = train_weighted(&train, &vec![1.0; train.n()], &cfg.blackbox, &rng.child(2))?;
    let est = estimate_shift(
        &predict_all(&blackbox, &held)?,
        held.labels(),
        &predict_all(&blackbox, &target)?,
        source.k(),
        &RllsOptions {
            lambda_reg: cfg.lambda,
            renormalize: false,
        },
    )?;
    create_out(&common.out())?;
    println!("r = {:?}", est.r.as_slice());
    println!("sigma_min = {:.6}", est.sigma_min);
    write(
        common.out().join("weights.json"),
        &(serde_json::to_string_pretty(&est)? + "\n"),
    )
}

fn run_single(common: &Common, files: &SplitFiles, strategy: &str, stream: bool) -> Result<()> {
    let cfg = experiment_config(common)?;
    let strategy = Strategy::parse(strategy)?;
    if strategy.is_stream() != stream {
        bail!(
            "strategy '{}' belongs to {}",
            strategy.name(),
            if strategy.is_stream() {
                "run-stream"
            } else {
                "run-batched"
            }
        );
    }
    let sc = scenario(&cfg, files, common.seed)?;
    create_out(&common.out())?;
    let (result, log, log_name) = if stream {
        let run = run_stream_strategy(&cfg, strategy, &sc, common.seed)?;
        let log = run.to_jsonl()?;
        (run.result, log, "events.jsonl")
    } else {
        let run = run_batched_strategy(&cfg, strategy, &sc, common.seed)?;
        let log = rounds_to_jsonl(&run.result)?;
        (run.result, log, "rounds.jsonl")
    };
    result.validate()?;
    write(common.out().join(log_name), &log)?;
    let rows = summary_rows(strategy, common.seed, &result);
    write(common.out().join("summary.csv"), &summary_csv(&rows))?;
    if let Some(m) = result.final_metrics() {
        println!(
            "{} seed {}: {} labels, accuracy {:.4}, macro_f1 {:.4}",
            strategy.name(),
            common.seed,
            result.accounting.labels_spent(),
            m.get("accuracy").copied().unwrap_or(f64::NAN),
            m.get("macro_f1").copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn run_suite(common: &Common) -> Result<()> {
    let cfg = experiment_config(common)?;
    let out = run_experiment(&cfg)?;
    create_out(&common.out())?;
    write_outputs(&out, common.out())?;
    eprintln!(
        "wrote summary.csv, summary_ci.csv and rounds.jsonl to {}",
        common.out().display()
    );
    for s in &cfg.strategies {
        println!(
            "{:<20} accuracy {:.4}  macro_f1 {:.4}",
            s.name(),
            out.final_mean(*s, "accuracy").unwrap_or(f64::NAN),
            out.final_mean(*s, "macro_f1").unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn report(common: &Common, input: &Path, metric: &str) -> Result<()> {
    if !METRICS.contains(&metric) {
        bail!("unknown metric '{metric}'; expected one of {}", METRICS.join(", "));
    }
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let rows = read_summary_csv(&text)?;
    let mut order: Vec<Strategy> = Vec::new();
    for r in &rows {
        let s = Strategy::parse(&r.strategy)?;
        if !order.contains(&s) {
            order.push(s);
        }
    }
    let ci = confidence_rows(&rows, &order);
    println!(
        "{:<20} {:>7} {:>8} {:>8} {:>8} {:>6}",
        "strategy", "budget", "mean", "ci_low", "ci_high", "seeds"
    );
    for s in &order {
        let last = ci
            .iter()
            .filter(|c| c.strategy == s.name() && c.metric == metric)
            .max_by_key(|c| c.budget);
        if let Some(c) = last {
            println!(
                "{:<20} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>6}",
                c.strategy, c.budget, c.mean, c.ci_low, c.ci_high, c.n_seeds
            );
        }
    }
    if let Some(dir) = &common.out {
        create_out(dir)?;
        write(dir.join("summary_ci.csv"), &ci_csv(&ci))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData {
            common,
            k,
            d,
            n,
            separation,
        } => gen_data(common, *k, *d, *n, *separation),
        Command::ShiftSplit {
            common,
            data,
            alpha,
            target_frac,
        } => shift_split(common, data, *alpha, *target_frac),
        Command::EstimateWeights {
            common,
            source,
            target,
            lambda,
            train_frac,
        } => estimate_weights(common, source, target, *lambda, *train_frac),
        Command::RunStream {
            common,
            files,
            strategy,
        } => run_single(common, files, strategy, true),
        Command::RunBatched {
            common,
            files,
            strategy,
        } => run_single(common, files, strategy, false),
        Command::RunSuite { common } => run_suite(common),
        Command::Report { common, input, metric } => report(common, input, metric),
    }
}
