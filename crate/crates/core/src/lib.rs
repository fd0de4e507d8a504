//! Median-of-means (MOM) minmax estimators for robust penalized least
//! squares.
//!
//! The estimator replaces the empirical risk of the LASSO (or SLOPE) by the
//! median of block-wise means of loss differences and is computed with
//! alternating descent-ascent methods that, at every half-step, move on the
//! rows of the median block only.
//!
//! ```no_run
//! use momreg::{dataset::{generate, GenSpec}, solvers::{fit, SolverConfig}};
//!
//! let data = generate(&GenSpec { n_bad3: 1, ..GenSpec::default() })?;
//! let est = fit(&data, &SolverConfig { k: 11, lambda: 0.1, ..SolverConfig::default() })?;
//! println!("error: {}", momreg::dataset::ell2_error(&est.t_hat, data.truth().unwrap())?);
//! # Ok::<(), momreg::Error>(())
//! ```

pub mod blocks;
pub mod csvio;
pub mod dataset;
mod error;
pub mod mom;
pub mod outlier;
pub mod regularizers;
pub mod rng;
pub mod solvers;
pub mod tuning;

pub use blocks::{BlockMode, BlockPartition, BlockPolicy};
pub use dataset::{CoefficientStyle, Dataset, GenSpec, GroundTruth, Label};
pub use error::{Error, Result};
pub use regularizers::Penalty;
pub use solvers::{Algorithm, Estimate, Mode, SolverConfig, StepPolicy};
pub use outlier::{DepthScores, FlagMethod};
pub use tuning::{CvResult, CvSpec, FoldAggregate};
