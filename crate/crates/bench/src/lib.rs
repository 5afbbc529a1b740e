//! Shared fixtures for the criterion benchmarks.

use malls_core::harness::experiment::DESK_SEPARATION;
use malls_core::harness::gen_gaussian_mixture;
use malls_core::{Dataset, RngStream};

/// Desk-scale mixture used across benches.
pub fn mixture(n: usize, seed: u64) -> Dataset {
    gen_gaussian_mixture(10, 20, n, DESK_SEPARATION, &RngStream::from_seed(seed)).expect("valid mixture parameters")
}
