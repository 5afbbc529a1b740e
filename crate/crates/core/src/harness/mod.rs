//! Synthetic data, shift scenarios, metrics and the experiment runner.

pub mod experiment;
pub mod metrics;
pub mod scenario;
pub mod synth;

pub use experiment::{run_experiment, write_outputs, ExperimentConfig, ExperimentOutput, Strategy};
pub use metrics::{compute_metrics, MetricsReport};
pub use scenario::{make_scenario, Scenario, ScenarioKind, ShiftScenario, SplitMarginals, SplitSizes};
pub use synth::{dirichlet_shift_split, gen_gaussian_mixture, sample_dirichlet};
