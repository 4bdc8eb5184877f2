//! Fixed workloads shared by the benchmarks.

use dpreg_core::datagen::sample_linear_model;
use dpreg_core::rng::seeded;
use dpreg_core::{condition_covariance, Dataset, ModelSpec, NoiseFamily};

/// Clean Gaussian regression data: `w* = (1, ..., 1)/sqrt(d)`, `Σ = I`, `σ = 1`.
pub fn gaussian_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let w_star = vec![1.0 / (d as f64).sqrt(); d];
    let spec = ModelSpec::new(w_star, 1.0, condition_covariance(d, 1.0), NoiseFamily::Gaussian, false)
        .expect("valid model");
    sample_linear_model(&spec, n, &mut seeded(seed)).expect("sampling succeeds")
}
