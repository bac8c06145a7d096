//! Shared fixtures for the benchmarks.

use onestep_core::sim::{ControlLaw, Dgp, DgpConfig, OutcomeLaw};
use onestep_core::Dataset;

/// A simulated dataset from the "nonzero on both sides" design.
pub fn unit_dataset(n: usize, seed: u64) -> Dataset {
    Dgp::new(DgpConfig::new(OutcomeLaw::NonzeroBoth, ControlLaw::SameAsTreated))
        .expect("valid design")
        .generate(n, seed)
        .expect("positive sample size")
}
