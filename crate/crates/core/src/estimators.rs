//! Private calibration of the clipping thresholds: a norm estimator for
//! `Tr(Σ)` and a trimmed, partitioned distance estimator for
//! `||w - w*||_Σ^2 + σ^2`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::ops::{quantile_nearest_rank, trimmed_mean_below};
use crate::privacy::{stable_histogram, BinFamily, HistogramConfig};

/// Tuning shared by both estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Partition-count constant `C1`.
    pub c1: f64,
    /// Upper bound `ᾱ` on the corrupted fraction.
    pub alpha_bar: f64,
    /// Failure probability `ζ`.
    pub zeta: f64,
    pub histogram: HistogramConfig,
    /// Fixed number of partitions in place of the `C1` formula. Mostly useful
    /// with `epsilon0 = inf`, where the formula gives a single partition.
    pub partitions: Option<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            c1: 8.0,
            alpha_bar: 0.1,
            zeta: 0.1,
            histogram: HistogramConfig::default(),
            partitions: None,
        }
    }
}

impl EstimatorConfig {
    pub fn new(c1: f64, alpha_bar: f64, zeta: f64) -> Result<Self> {
        let cfg = Self {
            c1,
            alpha_bar,
            zeta,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(invalid("C1", format!("must be positive, got {}", self.c1)));
        }
        if !(self.alpha_bar > 0.0 && self.alpha_bar <= 0.1) {
            return Err(invalid("alpha_bar", format!("must lie in (0, 0.1], got {}", self.alpha_bar)));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(invalid("zeta", format!("must lie in (0, 1), got {}", self.zeta)));
        }
        if self.partitions == Some(0) {
            return Err(invalid("partitions", "must be at least 1"));
        }
        Ok(())
    }

    fn raw_partitions(&self, epsilon0: f64, delta0: f64) -> f64 {
        self.c1 * (1.0 / (delta0 * self.zeta)).ln() / epsilon0
    }

    /// `max(1, floor(C1 ln(1/(δ0 ζ)) / ε0))`, as used by the norm estimator.
    pub fn norm_partitions(&self, epsilon0: f64, delta0: f64) -> usize {
        self.partitions
            .unwrap_or_else(|| (self.raw_partitions(epsilon0, delta0).floor() as usize).max(1))
    }

    /// `max(1, ceil(C1 ln(1/(δ0 ζ)) / ε0))`, as used by the distance estimator.
    pub fn distance_partitions(&self, epsilon0: f64, delta0: f64) -> usize {
        self.partitions
            .unwrap_or_else(|| (self.raw_partitions(epsilon0, delta0).ceil() as usize).max(1))
    }
}

/// Sorts `values` (so the result does not depend on row order), shuffles them
/// with `rng`, cuts `k` contiguous blocks of `floor(len/k)` and applies `stat`
/// to each block. The remainder is dropped.
fn partition_statistics<R, F>(
    mut values: Vec<f64>,
    k: usize,
    estimator: &'static str,
    rng: &mut R,
    stat: F,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if values.len() < k {
        return Err(Error::InsufficientSamples {
            estimator,
            needed: k,
            partitions: k,
            available: values.len(),
        });
    }
    values.sort_by(f64::total_cmp);
    values.shuffle(rng);
    let m = values.len() / k;
    values[..m * k].par_chunks(m).map(&stat).collect()
}

/// Private estimate `Γ` of `Tr(Σ)` from the squared covariate norms.
///
/// Returns the left edge of the modal quarter-octave bin of the partition means.
pub fn private_norm_estimator<R: Rng + ?Sized>(
    data: &Dataset,
    epsilon0: f64,
    delta0: f64,
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<f64> {
    config.validate()?;
    let k = config.norm_partitions(epsilon0, delta0);
    let sq_norms: Vec<f64> = (0..data.len()).map(|i| dot(data.x(i), data.x(i))).collect();
    let means = partition_statistics(sq_norms, k, "norm estimator", rng, |block| {
        Ok(block.iter().sum::<f64>() / block.len() as f64)
    })?;
    let bins = BinFamily::geometric_pow2(4);
    let release = stable_histogram(&means, &bins, epsilon0, delta0, &config.histogram, rng);
    release
        .argmax_bin
        .map(|(left, _)| left)
        .ok_or(Error::NoBinReleased {
            estimator: "norm estimator",
        })
}

/// Private, corruption-robust estimate `ℓ` of `||w - w*||_Σ^2 + σ^2`.
///
/// Each partition of the squared residuals contributes its trimmed mean below
/// the `(1 - 3ᾱ)` quantile; the result is the left edge of the modal octave bin.
pub fn private_distance_estimator<R: Rng + ?Sized>(
    data: &Dataset,
    w: &[f64],
    epsilon0: f64,
    delta0: f64,
    config: &EstimatorConfig,
    rng: &mut R,
) -> Result<f64> {
    config.validate()?;
    if w.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "iterate vs covariates",
            expected: data.dim(),
            got: w.len(),
        });
    }
    let k = config.distance_partitions(epsilon0, delta0);
    let q = 1.0 - 3.0 * config.alpha_bar;
    let values = squared_residuals(data.covariates(), data.responses(), w);
    let trimmed = partition_statistics(values, k, "distance estimator", rng, |block| {
        trimmed_mean_below(block, quantile_nearest_rank(block, q)?)
    })?;
    let bins = BinFamily::geometric_pow2(1);
    let release = stable_histogram(&trimmed, &bins, epsilon0, delta0, &config.histogram, rng);
    release
        .argmax_bin
        .map(|(left, _)| left)
        .ok_or(Error::NoBinReleased {
            estimator: "distance estimator",
        })
}

/// `(y_i - <x_i, w>)^2` for every row.
pub fn squared_residuals(x: &Matrix, y: &[f64], w: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let r = y[i] - dot(x.row(i), w);
            r * r
        })
        .collect()
}
