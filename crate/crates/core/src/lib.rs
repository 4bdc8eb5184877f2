//! Differentially private, label-corruption-robust linear regression.
//!
//! The main entry point is [`regression::dp_robust_gd`]: full-batch gradient
//! descent that clips covariate norms and residuals separately, calibrates both
//! thresholds with private estimators and adds Gaussian noise to every step.
//! Around it sit the DP primitives ([`privacy`]), the calibrators
//! ([`estimators`]), synthetic data and adversaries ([`datagen`]), reference
//! solvers ([`baselines`]) and a seeded experiment runner ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_range_contains)]

pub mod baselines;
pub mod data;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod ops;
pub mod privacy;
pub mod regression;
pub mod rng;

pub use data::{condition_covariance, Dataset, ModelSpec, NoiseFamily, SubWeibullParams};
pub use error::{Error, Result};
pub use estimators::EstimatorConfig;
pub use linalg::{solve_spd, Matrix};
pub use ops::{clip_scalar, clip_vector, quantile_nearest_rank, sigma_norm_error, trimmed_mean_below};
pub use privacy::{derive_round_budget, PrivacyBudget, RoundBudget};
pub use regression::{GdConfig, HeavyTailConfig, IterateTrace};
