//! Shared fixtures for the solver benchmarks.

use momreg::dataset::{generate, GenSpec};
use momreg::Dataset;

/// The default simulation design with `outliers` gross outliers.
pub fn simulation(d: usize, outliers: usize) -> Dataset {
    generate(&GenSpec { d, n_bad3: outliers, seed: 7, ..GenSpec::default() }).expect("valid fixture")
}
