//! Private, robust full-batch gradient descent with two-sided clipping, plus its
//! heavy-tailed-noise variant.
//!
//! The sample is split into three disjoint parts: one calibrates the covariate
//! norm threshold `Θ`, one calibrates the per-round residual threshold `θ_t`,
//! and one feeds the clipped gradient steps.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::data::{Dataset, SubWeibullParams};
use crate::error::{invalid, Error, Result};
use crate::estimators::{private_distance_estimator, private_norm_estimator, EstimatorConfig};
use crate::linalg::{dot, norm, Matrix};
use crate::ops::{clip_scalar, clip_vector, sigma_norm_error};
use crate::privacy::{derive_round_budget, PrivacyBudget, RoundBudget};
use crate::rng::standard_normal_vec;

/// Iterates whose norm exceeds this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e8;

const CHUNK: usize = 4096;

/// `Θ = K sqrt(2Γ) ln(n/ζ0)^a`.
pub fn compute_norm_threshold(gamma: f64, k: f64, a: f64, n: usize, zeta0: f64) -> Result<f64> {
    let ratio = n as f64 / zeta0;
    if !(ratio > 1.0) {
        return Err(invalid("n/zeta0", format!("must exceed 1 for a positive log, got {ratio}")));
    }
    if !(gamma > 0.0) {
        return Err(invalid("Gamma", format!("must be positive, got {gamma}")));
    }
    Ok(k * (2.0 * gamma).sqrt() * ratio.ln().powf(a))
}

fn threshold_from_multiplier(gamma: f64, multiplier_sq: f64, clip_scale: f64) -> f64 {
    clip_scale * 2.0 * (2.0 * gamma).sqrt() * multiplier_sq.sqrt()
}

/// `θ_t = clip_scale * 2 sqrt(2γ_t) * sqrt(9 C2 K^2 ln(1/(2α))^(2a))`.
pub fn compute_residual_threshold(
    gamma_t: f64,
    alpha: f64,
    k: f64,
    a: f64,
    c2: f64,
    clip_scale: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid("alpha", format!("must lie in (0, 0.5), got {alpha}")));
    }
    if !(gamma_t > 0.0) {
        return Err(invalid("gamma_t", format!("must be positive, got {gamma_t}")));
    }
    let multiplier_sq = 9.0 * c2 * k * k * (1.0 / (2.0 * alpha)).ln().powf(2.0 * a);
    Ok(threshold_from_multiplier(gamma_t, multiplier_sq, clip_scale))
}

/// `θ_t = clip_scale * 2 sqrt(2γ_t) * sqrt(max(8ρ2/α, 8ρ3/α) + 1)`.
pub fn compute_residual_threshold_ht(
    gamma_t: f64,
    alpha: f64,
    rho2: f64,
    rho3: f64,
    clip_scale: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid("alpha", format!("must be positive, got {alpha}")));
    }
    if !(gamma_t > 0.0) {
        return Err(invalid("gamma_t", format!("must be positive, got {gamma_t}")));
    }
    let multiplier_sq = (8.0 * rho2 / alpha).max(8.0 * rho3 / alpha) + 1.0;
    Ok(threshold_from_multiplier(gamma_t, multiplier_sq, clip_scale))
}

/// `φ_t = sqrt(2 ln(1.25/δ0)) Θ θ_t / (ε0 n)`.
pub fn noise_scale(big_theta: f64, theta_t: f64, epsilon0: f64, delta0: f64, n: usize) -> f64 {
    (2.0 * (1.25 / delta0).ln()).sqrt() * big_theta * theta_t / (epsilon0 * n as f64)
}

/// `ceil(3 κ ln n)`.
pub fn default_iterations(kappa: f64, n: usize) -> usize {
    (3.0 * kappa * (n as f64).ln()).ceil() as usize
}

/// Statistics of one clipped gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub w_next: Vec<f64>,
    /// Largest per-sample clipped gradient norm.
    pub max_gradient_norm: f64,
    /// Rows whose residual magnitude reached the threshold.
    pub residual_clipped: Vec<usize>,
}

/// One step on covariates already clipped to `Θ`.
fn clipped_step<R: Rng + ?Sized>(
    w: &[f64],
    clipped_x: &Matrix,
    y: &[f64],
    theta_t: f64,
    eta: f64,
    phi_t: f64,
    rng: &mut R,
) -> StepOutcome {
    let d = w.len();
    let n = y.len();
    // Fixed-size chunks summed in order keep the reduction deterministic.
    let partials: Vec<(Vec<f64>, f64, Vec<usize>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; d];
            let mut max_norm = 0.0f64;
            let mut clipped = Vec::new();
            #[allow(clippy::needless_range_loop)]
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let x = clipped_x.row(i);
                let r = dot(x, w) - y[i];
                if r.abs() >= theta_t {
                    clipped.push(i);
                }
                let rc = clip_scalar(r, theta_t);
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += xj * rc;
                }
                max_norm = max_norm.max(norm(x) * rc.abs());
            }
            (g, max_norm, clipped)
        })
        .collect();
    let mut grad = vec![0.0; d];
    let mut max_gradient_norm = 0.0f64;
    let mut residual_clipped = Vec::new();
    for (g, m, c) in partials {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        max_gradient_norm = max_gradient_norm.max(m);
        residual_clipped.extend(c);
    }
    let noise = if phi_t > 0.0 {
        standard_normal_vec(rng, d)
    } else {
        vec![0.0; d]
    };
    let w_next = (0..d)
        .map(|j| w[j] - eta * (grad[j] / n as f64 + phi_t * noise[j]))
        .collect();
    StepOutcome {
        w_next,
        max_gradient_norm,
        residual_clipped,
    }
}

fn clip_rows(x: &Matrix, bound: f64) -> Matrix {
    let mut data = Vec::with_capacity(x.rows() * x.cols());
    for i in 0..x.rows() {
        data.extend(clip_vector(x.row(i), bound));
    }
    Matrix::from_row_major(x.rows(), x.cols(), data).expect("same shape")
}

/// `w_{t+1} = w_t - η((1/n) Σ clip_Θ(x_i) clip_θ(x_i^T w_t - y_i) + φ_t ν_t)` with
/// `ν_t ~ N(0, I)`.
#[allow(clippy::too_many_arguments)]
pub fn gd_step<R: Rng + ?Sized>(
    w: &[f64],
    batch: &Dataset,
    big_theta: f64,
    theta_t: f64,
    eta: f64,
    phi_t: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    if w.len() != batch.dim() {
        return Err(Error::DimensionMismatch {
            what: "iterate vs covariates",
            expected: batch.dim(),
            got: w.len(),
        });
    }
    let clipped = clip_rows(batch.covariates(), big_theta);
    Ok(clipped_step(w, &clipped, batch.responses(), theta_t, eta, phi_t, rng))
}

/// How the step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// `η = 1/(c_step λ_max)`, `c_step >= 1.1`.
    LambdaMax { lambda_max: f64, c_step: f64 },
}

impl StepSize {
    pub fn from_lambda_max(lambda_max: f64) -> Self {
        Self::LambdaMax {
            lambda_max,
            c_step: 2.0,
        }
    }

    pub fn eta(&self) -> Result<f64> {
        match *self {
            Self::Fixed(eta) if eta > 0.0 && eta.is_finite() => Ok(eta),
            Self::Fixed(eta) => Err(invalid("eta", format!("must be positive, got {eta}"))),
            Self::LambdaMax { lambda_max, c_step } => {
                if !(c_step >= 1.1) {
                    return Err(invalid("c_step", format!("must be at least 1.1, got {c_step}")));
                }
                if !(lambda_max > 0.0 && lambda_max.is_finite()) {
                    return Err(invalid("lambda_max", format!("must be positive, got {lambda_max}")));
                }
                Ok(1.0 / (c_step * lambda_max))
            }
        }
    }
}

/// Source of `Γ`, the trace estimate behind the covariate threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormSource {
    /// Private norm estimator on the first split.
    Private,
    /// A public value (for example a known `Tr(Σ)`); the first split is not used.
    Known(f64),
}

/// Source of `γ_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    /// Private distance estimator on the second split.
    Private,
    /// Exact `||w_t - w*||_metric^2 + σ^2`. Not private; for diagnostics.
    Oracle {
        w_star: Vec<f64>,
        metric: Matrix,
        sigma: f64,
    },
}

/// How the sample is divided between the norm, distance and gradient parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Split {
    /// `floor(n/3)` rows each.
    Thirds,
    /// `floor(r n)` rows per part.
    Ratios { norm: f64, distance: f64, gradient: f64 },
}

impl Split {
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        match *self {
            Self::Thirds => Ok([n / 3; 3]),
            Self::Ratios {
                norm,
                distance,
                gradient,
            } => {
                let r = [norm, distance, gradient];
                if r.iter().any(|v| !(*v >= 0.0)) || r.iter().sum::<f64>() > 1.0 + 1e-12 {
                    return Err(invalid("split", format!("ratios {r:?} must be nonnegative and sum to at most 1")));
                }
                Ok(r.map(|v| (v * n as f64).floor() as usize))
            }
        }
    }
}

/// Tuning of the private robust gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub rounds: usize,
    pub step: StepSize,
    /// Target error rate `α` in the residual threshold.
    pub alpha: f64,
    pub subweibull: SubWeibullParams,
    pub c2: f64,
    pub clip_scale: f64,
    pub zeta: f64,
    pub budget: PrivacyBudget,
    /// Estimator constants. Its `zeta` is replaced by `ζ/3` inside a run.
    pub estimator: EstimatorConfig,
    pub norm_source: NormSource,
    pub threshold_source: ThresholdSource,
    pub split: Split,
}

impl GdConfig {
    pub fn new(rounds: usize, step: StepSize, budget: PrivacyBudget) -> Self {
        Self {
            rounds,
            step,
            alpha: 0.1,
            subweibull: SubWeibullParams::sub_gaussian(),
            c2: 1.0,
            clip_scale: 1.0,
            zeta: 0.1,
            budget,
            estimator: EstimatorConfig::default(),
            norm_source: NormSource::Private,
            threshold_source: ThresholdSource::Private,
            split: Split::Thirds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid("T", "need at least one round"));
        }
        self.step.eta()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.c2 > 0.0) {
            return Err(invalid("C2", "must be positive"));
        }
        if !(self.clip_scale > 0.0) {
            return Err(invalid("clip_scale", "must be positive"));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(invalid("zeta", format!("must lie in (0, 1), got {}", self.zeta)));
        }
        if let NormSource::Known(g) = self.norm_source {
            if !(g > 0.0) {
                return Err(invalid("Gamma", "known trace must be positive"));
            }
        }
        self.estimator.validate()
    }
}

/// Configuration of the heavy-tailed variant: the light-tailed settings plus
/// a resilience profile.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTailConfig {
    pub base: GdConfig,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub rho4: f64,
    pub moment_k: u32,
    pub kappa2: f64,
}

impl HeavyTailConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if [self.rho1, self.rho2, self.rho3, self.rho4].iter().any(|r| !(*r >= 0.0)) {
            return Err(invalid("rho", "resilience parameters must be nonnegative"));
        }
        if self.moment_k < 4 {
            return Err(invalid("moment_k", format!("must be at least 4, got {}", self.moment_k)));
        }
        if !(self.kappa2 > 0.0) {
            return Err(invalid("kappa2", "must be positive"));
        }
        Ok(())
    }
}

/// One round of the trace. `w` is the iterate the round started from.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub w: Vec<f64>,
    pub gamma: f64,
    pub theta: f64,
    pub phi: f64,
    pub max_gradient_norm: f64,
    /// Gradient-split rows with `|x^T w - y| >= θ_t` (covariates clipped).
    pub residual_clipped: usize,
    /// The same count restricted to rows flagged clean, when a mask was given.
    pub clean_clipped: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub rounds: Vec<RoundRecord>,
    pub gamma_norm: f64,
    pub big_theta: f64,
    pub eta: f64,
    pub round_budget: RoundBudget,
    /// Sizes of the norm, distance and gradient splits.
    pub split_sizes: [usize; 3],
    /// Rows of the input that formed the gradient split, in split order.
    pub gradient_indices: Vec<usize>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Iterate with the smallest `γ_t`; ties go to the later round.
    pub fn best_iterate(&self) -> Option<&[f64]> {
        self.rounds
            .iter()
            .rev()
            .min_by(|a, b| a.gamma.total_cmp(&b.gamma))
            .map(|r| r.w.as_slice())
    }
}

struct Splits {
    norm: Vec<usize>,
    distance: Vec<usize>,
    gradient: Vec<usize>,
}

fn split_indices<R: Rng + ?Sized>(n: usize, split: &Split, rng: &mut R) -> Result<Splits> {
    let [a, b, c] = split.sizes(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(Splits {
        norm: idx[..a].to_vec(),
        distance: idx[a..a + b].to_vec(),
        gradient: idx[a + b..a + b + c].to_vec(),
    })
}

fn run<R, F>(
    data: &Dataset,
    config: &GdConfig,
    clean: Option<&[bool]>,
    residual_threshold: F,
    rng: &mut R,
) -> Result<(Vec<f64>, IterateTrace)>
where
    R: Rng + ?Sized,
    F: Fn(f64) -> Result<f64>,
{
    config.validate()?;
    if let Some(mask) = clean {
        if mask.len() != data.len() {
            return Err(Error::DimensionMismatch {
                what: "clean mask vs rows",
                expected: data.len(),
                got: mask.len(),
            });
        }
    }
    let eta = config.step.eta()?;
    let round_budget = derive_round_budget(config.budget, config.rounds)?;
    let (eps0, delta0) = (round_budget.epsilon0(), round_budget.delta0());
    let zeta0 = config.zeta / 3.0;
    let estimator = EstimatorConfig {
        zeta: zeta0,
        ..config.estimator
    };

    let splits = split_indices(data.len(), &config.split, rng)?;
    if splits.gradient.is_empty() {
        return Err(Error::Empty("gradient split"));
    }
    let gamma_norm = match config.norm_source {
        NormSource::Known(g) => g,
        NormSource::Private => {
            private_norm_estimator(&data.select(&splits.norm), eps0, delta0, &estimator, rng)?
        }
    };
    let s2 = data.select(&splits.distance);
    let s3 = data.select(&splits.gradient);
    let n3 = s3.len();
    let sw = config.subweibull;
    let big_theta = compute_norm_threshold(gamma_norm, sw.k(), sw.a(), n3, zeta0)?;
    let clipped_x = clip_rows(s3.covariates(), big_theta);
    let clean_s3: Option<Vec<bool>> = clean.map(|m| splits.gradient.iter().map(|&i| m[i]).collect());

    let d = data.dim();
    let mut w = vec![0.0; d];
    let mut rounds = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        let gamma = match &config.threshold_source {
            ThresholdSource::Private => private_distance_estimator(&s2, &w, eps0, delta0, &estimator, rng)
                .map_err(|e| Error::RoundFailed {
                    round: t,
                    source: Box::new(e),
                })?,
            ThresholdSource::Oracle { w_star, metric, sigma } => {
                sigma_norm_error(&w, w_star, metric)?.powi(2) + sigma * sigma
            }
        };
        let theta = residual_threshold(gamma).map_err(|e| Error::RoundFailed {
            round: t,
            source: Box::new(e),
        })?;
        let phi = noise_scale(big_theta, theta, eps0, delta0, n3);
        let step = clipped_step(&w, &clipped_x, s3.responses(), theta, eta, phi, rng);
        let clean_clipped = clean_s3
            .as_ref()
            .map(|m| step.residual_clipped.iter().filter(|&&i| m[i]).count());
        rounds.push(RoundRecord {
            w: std::mem::replace(&mut w, step.w_next),
            gamma,
            theta,
            phi,
            max_gradient_norm: step.max_gradient_norm,
            residual_clipped: step.residual_clipped.len(),
            clean_clipped,
        });
        let size = norm(&w);
        if !(size <= DIVERGENCE_NORM) {
            return Err(Error::Diverged { round: t, norm: size });
        }
    }
    log::debug!("finished {} rounds, Gamma = {gamma_norm}, Theta = {big_theta}", config.rounds);
    Ok((
        w,
        IterateTrace {
            rounds,
            gamma_norm,
            big_theta,
            eta,
            round_budget,
            split_sizes: [splits.norm.len(), splits.distance.len(), n3],
            gradient_indices: splits.gradient,
        },
    ))
}

/// Private robust gradient descent on `data`; returns `w_T` and the trace.
pub fn dp_robust_gd<R: Rng + ?Sized>(
    data: &Dataset,
    config: &GdConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, IterateTrace)> {
    dp_robust_gd_with_mask(data, config, None, rng)
}

/// As [`dp_robust_gd`], additionally counting clipped residuals among rows
/// flagged `true` in `clean`.
pub fn dp_robust_gd_with_mask<R: Rng + ?Sized>(
    data: &Dataset,
    config: &GdConfig,
    clean: Option<&[bool]>,
    rng: &mut R,
) -> Result<(Vec<f64>, IterateTrace)> {
    let sw = config.subweibull;
    let threshold = |gamma| compute_residual_threshold(gamma, config.alpha, sw.k(), sw.a(), config.c2, config.clip_scale);
    run(data, config, clean, threshold, rng)
}

/// Heavy-tailed variant: same loop with the resilience-based residual threshold.
pub fn dp_robust_gd_ht<R: Rng + ?Sized>(
    data: &Dataset,
    config: &HeavyTailConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, IterateTrace)> {
    config.validate()?;
    let base = &config.base;
    let threshold =
        |gamma| compute_residual_threshold_ht(gamma, base.alpha, config.rho2, config.rho3, base.clip_scale);
    run(data, base, None, threshold, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn norm_threshold_examples() {
        assert_eq!(compute_norm_threshold(2.0, 1.0, 0.0, 1000, 0.1).unwrap(), 2.0);
        let t = compute_norm_threshold(5.0, 1.0, 0.5, 1000, 0.1).unwrap();
        assert!((t - 9.5971).abs() < 1e-4, "{t}");
        let a = compute_norm_threshold(3.0, 1.2, 0.7, 500, 0.05).unwrap();
        let b = compute_norm_threshold(6.0, 1.2, 0.7, 500, 0.05).unwrap();
        assert!((b / a - 2f64.sqrt()).abs() < 1e-14);
        assert!(compute_norm_threshold(1.0, 1.0, 0.5, 1, 1.0).is_err());
    }

    #[test]
    fn residual_threshold_examples() {
        let t = compute_residual_threshold(2.0, 0.1, 1.0, 0.5, 1.0, 1.0).unwrap();
        assert!((t - 4.0 * (9.0f64 * 1.6094379).sqrt()).abs() < 1e-6, "{t}");
        assert!((t - 15.2235).abs() < 5e-4);
        let h = compute_residual_threshold(2.0, 0.1, 1.0, 0.5, 1.0, 0.5).unwrap();
        assert_eq!(h, t / 2.0);
        let a0 = compute_residual_threshold(2.0, 0.3, 1.0, 0.0, 1.0, 1.0).unwrap();
        let a1 = compute_residual_threshold(2.0, 0.01, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(a0, a1);
        assert_eq!(a0, 2.0 * 2.0 * 3.0);
        assert!(compute_residual_threshold(2.0, 0.5, 1.0, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn heavy_tail_threshold_examples() {
        assert_eq!(compute_residual_threshold_ht(2.0, 0.1, 0.0, 0.0, 1.0).unwrap(), 4.0);
        let t = compute_residual_threshold_ht(2.0, 0.1, 0.05, 0.2, 1.0).unwrap();
        assert!((t - 16.4924).abs() < 1e-4, "{t}");
        let a = compute_residual_threshold_ht(1.5, 0.1, 0.05, 0.2, 1.0).unwrap();
        let b = compute_residual_threshold_ht(6.0, 0.1, 0.05, 0.2, 1.0).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(compute_residual_threshold_ht(2.0, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn reduced_thresholds_agree_bitwise() {
        for gamma in [0.3, 1.0, 2.7, 1e-3, 55.5] {
            let light = compute_residual_threshold(gamma, 0.1, 1.0, 0.0, 1.0 / 9.0, 0.5).unwrap();
            let heavy = compute_residual_threshold_ht(gamma, 0.1, 0.0, 0.0, 0.5).unwrap();
            assert_eq!(light.to_bits(), heavy.to_bits());
        }
    }

    #[test]
    fn noise_scale_examples() {
        let delta0 = 1.25 / std::f64::consts::E.powi(2);
        let phi = noise_scale(1.0, 1.0, 1.0, delta0, 2);
        assert!((phi - 1.0).abs() < 1e-12);
        assert_eq!(noise_scale(1.0, 2.0, 0.5, 1e-6, 20), 2.0 * noise_scale(1.0, 2.0, 0.5, 1e-6, 40));
        assert_eq!(noise_scale(2.0, 2.0, 0.5, 1e-6, 20), 2.0 * noise_scale(1.0, 2.0, 0.5, 1e-6, 20));
    }

    #[test]
    fn default_iteration_examples() {
        assert_eq!(default_iterations(1.0, 20), 9);
        assert_eq!(default_iterations(10.0, 100_000), 346);
        assert_eq!(default_iterations(1.0, 2), 3);
    }

    #[test]
    fn gd_step_examples() {
        let one = Dataset::from_rows(&[vec![1.0, 0.0]], vec![0.0]).unwrap();
        let mut rng = seeded(0);
        let s = gd_step(&[1.0, 0.0], &one, 1.0, 1.0, 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(s.w_next, vec![0.5, 0.0]);
        let s = gd_step(&[1.0, 0.0], &one, 1.0, 0.5, 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(s.w_next, vec![0.75, 0.0]);
        assert_eq!(s.residual_clipped, vec![0]);
    }

    #[test]
    fn gd_step_fixed_point() {
        let rows = vec![vec![1.0, 2.0], vec![-0.5, 0.3], vec![2.0, -1.0]];
        let w_star = [0.7, -1.1];
        let ys = rows.iter().map(|r| dot(r, &w_star)).collect();
        let data = Dataset::from_rows(&rows, ys).unwrap();
        let s = gd_step(&w_star, &data, 10.0, 10.0, 0.3, 0.0, &mut seeded(0)).unwrap();
        for (a, b) in s.w_next.iter().zip(&w_star) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(gd_step(&w_star, &data.select(&[]), 1.0, 1.0, 0.1, 0.0, &mut seeded(0)).is_err());
    }

    #[test]
    fn step_size_rules() {
        assert_eq!(StepSize::from_lambda_max(2.0).eta().unwrap(), 0.25);
        assert!(StepSize::LambdaMax { lambda_max: 1.0, c_step: 1.0 }.eta().is_err());
        assert!(StepSize::Fixed(-1.0).eta().is_err());
    }

    #[test]
    fn split_sizes() {
        assert_eq!(Split::Thirds.sizes(10).unwrap(), [3, 3, 3]);
        let r = Split::Ratios { norm: 0.0, distance: 0.2, gradient: 0.8 };
        assert_eq!(r.sizes(1000).unwrap(), [0, 200, 800]);
        assert!(Split::Ratios { norm: 0.5, distance: 0.5, gradient: 0.5 }.sizes(10).is_err());
    }

    #[test]
    fn best_iterate_prefers_later_ties() {
        let rec = |w: f64, gamma: f64| RoundRecord {
            w: vec![w],
            gamma,
            theta: 1.0,
            phi: 0.0,
            max_gradient_norm: 0.0,
            residual_clipped: 0,
            clean_clipped: None,
        };
        let trace = IterateTrace {
            rounds: vec![rec(0.0, 4.0), rec(1.0, 2.0), rec(2.0, 2.0), rec(3.0, 8.0)],
            gamma_norm: 1.0,
            big_theta: 1.0,
            eta: 0.1,
            round_budget: derive_round_budget(PrivacyBudget::new(1.0, 1e-6).unwrap(), 4).unwrap(),
            split_sizes: [1, 1, 1],
            gradient_indices: vec![0],
        };
        assert_eq!(trace.best_iterate().unwrap(), &[2.0]);
    }
}
