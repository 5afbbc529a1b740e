//! Active learning under label shift.
//!
//! The crate is organised around the pieces needed to learn a classifier
//! for a target domain whose class proportions differ from the data the
//! learner can label:
//!
//! - [`shift`]: black-box weight estimation (BBSE, ridge-regularized RLLS)
//!   and the weighting/subsampling error-bound calculator.
//! - [`sampling`]: medial distributions and the two proxy-label subsamplers.
//! - [`learner`]: weighted softmax regression, bootstrap ensembles,
//!   uncertainty scores and posterior regularization.
//! - [`stream`]: streaming MALLS built on IWAL-CAL query probabilities.
//! - [`batched`]: batched MALLS with per-class uncertainty quotas.
//! - [`harness`]: synthetic data, Dirichlet shifts, scenarios, metrics and
//!   the multi-seed experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batched;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod learner;
pub mod marginal;
pub mod rng;
pub mod run;
pub mod sampling;
pub mod shift;
pub mod stream;

pub use dataset::{load_dataset, save_dataset, Dataset, LabelOracle};
pub use error::{Error, Result};
pub use learner::{Classifier, Ensemble, LinearModel, TrainHyper, UncertaintyMeasure};
pub use marginal::{empirical_marginal, ImportanceWeights, LabelMarginal, ShiftKind};
pub use rng::{RngStream, SeededRng};
pub use run::{LabelAccounting, RoundRecord, RunResult};
pub use sampling::{MedialPolicy, SubsampleFilter};
pub use shift::{ConfusionMatrix, ShiftEstimate};
