//! Reference solvers: least squares, tail-averaged one-pass SGD, streaming
//! DP-SGD with per-sample gradient clipping, and sufficient-statistics
//! perturbation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, SubWeibullParams};
use crate::error::{invalid, Error, Result};
use crate::estimators::{private_distance_estimator, EstimatorConfig};
use crate::linalg::{dot, solve_spd, Matrix, SymmetricEigen};
use crate::ops::{clip_scalar, clip_vector};
use crate::privacy::{derive_round_budget, gaussian_noise_std, PrivacyBudget};
use crate::regression::compute_residual_threshold;
use crate::rng::standard_normal;

/// Eigenvalue floor used when the released Gram matrix is not positive definite.
pub const SSP_EIGEN_FLOOR: f64 = 1e-6;

/// Ordinary least squares through the normal equations.
pub fn ols(data: &Dataset) -> Result<Vec<f64>> {
    if data.len() < data.dim() {
        return Err(invalid(
            "n",
            format!("least squares needs at least d = {} rows, got {}", data.dim(), data.len()),
        ));
    }
    let (gram, xty) = data.normal_equations();
    solve_spd(&gram, &xty)
}

/// Shuffles the rows and cuts `rounds` disjoint batches of `floor(n/rounds)`.
fn batches<R: Rng + ?Sized>(n: usize, rounds: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if rounds == 0 {
        return Err(invalid("T", "need at least one round"));
    }
    if rounds > n {
        return Err(invalid("T", format!("{rounds} rounds exceed {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let size = n / rounds;
    Ok(idx.chunks(size).take(rounds).map(<[usize]>::to_vec).collect())
}

/// One pass over `batches`: `w <- w - η(mean_B clip_θ(x (x^T w - y)) + s ν)`,
/// where `θ` and the noise std `s` come from `round` for each batch. Returns
/// every iterate after `w_0 = 0`.
fn streaming_pass<R, F>(
    data: &Dataset,
    batches: &[Vec<usize>],
    eta: f64,
    mut round: F,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64], &mut R) -> Result<(f64, f64)>,
{
    let d = data.dim();
    let mut w = vec![0.0; d];
    let mut iterates = Vec::with_capacity(batches.len());
    #[cfg(debug_assertions)]
    let mut visits = vec![0u8; data.len()];
    for (t, batch) in batches.iter().enumerate() {
        let (theta, noise_std) = round(t, &w, rng)?;
        let mut grad = vec![0.0; d];
        for &i in batch {
            #[cfg(debug_assertions)]
            {
                visits[i] += 1;
                debug_assert!(visits[i] == 1, "row {i} visited twice");
            }
            let x = data.x(i);
            let r = dot(x, &w) - data.y(i);
            let g: Vec<f64> = x.iter().map(|v| v * r).collect();
            for (a, b) in grad.iter_mut().zip(clip_vector(&g, theta)) {
                *a += b;
            }
        }
        let m = batch.len() as f64;
        for gj in grad.iter_mut() {
            *gj /= m;
        }
        if noise_std > 0.0 {
            for gj in grad.iter_mut() {
                *gj += noise_std * standard_normal(rng);
            }
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= eta * gj;
        }
        iterates.push(w.clone());
    }
    Ok(iterates)
}

/// Constant-step (`1/(2 λ_max)`) one-pass SGD over `rounds` disjoint shuffled
/// batches; every iterate, `w_1..w_T`.
pub fn sgd_iterates<R: Rng + ?Sized>(
    data: &Dataset,
    lambda_max: f64,
    rounds: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(lambda_max > 0.0) {
        return Err(invalid("lambda_max", "must be positive"));
    }
    let b = batches(data.len(), rounds, rng)?;
    streaming_pass(data, &b, 1.0 / (2.0 * lambda_max), |_, _, _| Ok((f64::INFINITY, 0.0)), rng)
}

/// One-pass SGD averaged over the last `ceil(T/2)` iterates.
pub fn one_pass_sgd<R: Rng + ?Sized>(data: &Dataset, lambda_max: f64, rounds: usize, rng: &mut R) -> Result<Vec<f64>> {
    let iterates = sgd_iterates(data, lambda_max, rounds, rng)?;
    let tail = rounds.div_ceil(2);
    let mut avg = vec![0.0; data.dim()];
    for w in &iterates[rounds - tail..] {
        for (a, b) in avg.iter_mut().zip(w) {
            *a += b;
        }
    }
    Ok(avg.into_iter().map(|v| v / tail as f64).collect())
}

/// Per-round gradient clipping thresholds for streaming DP-SGD.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSchedule {
    /// One threshold per round.
    Fixed(Vec<f64>),
    /// `θ_t = covariate_bound * θ_res(γ_t)`, with `γ_t` from the private
    /// distance estimator on a held-out fraction of the rows and `θ_res` the
    /// residual threshold of the robust solver.
    Adaptive {
        covariate_bound: f64,
        holdout: f64,
        alpha: f64,
        subweibull: SubWeibullParams,
        c2: f64,
        zeta: f64,
        estimator: EstimatorConfig,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamingConfig {
    pub rounds: usize,
    pub lambda_max: f64,
    /// `ε = inf` disables the noise.
    pub budget: PrivacyBudget,
    pub schedule: ThetaSchedule,
    pub clip_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamingRound {
    pub theta: f64,
    pub noise_std: f64,
    pub batch_size: usize,
}

/// Streaming DP-SGD: each row is used in exactly one round; per-sample gradients
/// are clipped to `θ_t` and the batch mean gets Gaussian noise with std
/// `θ_t sqrt(2 ln(1.25/δ0)) / (ε0 |B|)`, using the per-round budget.
/// Returns the last iterate (no averaging) and the per-round record.
pub fn streaming_dp_sgd<R: Rng + ?Sized>(
    data: &Dataset,
    config: &StreamingConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<StreamingRound>)> {
    if !(config.lambda_max > 0.0) {
        return Err(invalid("lambda_max", "must be positive"));
    }
    if !(config.clip_scale > 0.0) {
        return Err(invalid("clip_scale", "must be positive"));
    }
    let rb = derive_round_budget(config.budget, config.rounds)?;
    let (eps0, delta0) = (rb.epsilon0(), rb.delta0());
    let eta = 1.0 / (2.0 * config.lambda_max);
    let mut log = Vec::with_capacity(config.rounds);

    match &config.schedule {
        ThetaSchedule::Fixed(thetas) => {
            if thetas.len() != config.rounds {
                return Err(Error::DimensionMismatch {
                    what: "theta schedule vs rounds",
                    expected: config.rounds,
                    got: thetas.len(),
                });
            }
            let b = batches(data.len(), config.rounds, rng)?;
            let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
            let iterates = streaming_pass(
                data,
                &b,
                eta,
                |t, _, _| {
                    let theta = config.clip_scale * thetas[t];
                    let std = gaussian_noise_std(theta, eps0, delta0) / sizes[t] as f64;
                    log.push(StreamingRound {
                        theta,
                        noise_std: std,
                        batch_size: sizes[t],
                    });
                    Ok((theta, std))
                },
                rng,
            )?;
            Ok((iterates.last().cloned().unwrap_or_default(), log))
        }
        ThetaSchedule::Adaptive {
            covariate_bound,
            holdout,
            alpha,
            subweibull,
            c2,
            zeta,
            estimator,
        } => {
            if !(*holdout > 0.0 && *holdout < 1.0) {
                return Err(invalid("holdout", format!("must lie in (0, 1), got {holdout}")));
            }
            let n = data.len();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let cut = (holdout * n as f64).floor() as usize;
            let calib = data.select(&idx[..cut]);
            let stream = data.select(&idx[cut..]);
            let est = EstimatorConfig {
                zeta: zeta / 2.0,
                ..*estimator
            };
            let b = batches(stream.len(), config.rounds, rng)?;
            let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
            let iterates = streaming_pass(
                &stream,
                &b,
                eta,
                |t, w, rng| {
                    let gamma = private_distance_estimator(&calib, w, eps0, delta0, &est, rng).map_err(|e| {
                        Error::RoundFailed {
                            round: t,
                            source: Box::new(e),
                        }
                    })?;
                    let theta_res =
                        compute_residual_threshold(gamma, *alpha, subweibull.k(), subweibull.a(), *c2, config.clip_scale)?;
                    let theta = covariate_bound * theta_res;
                    let std = gaussian_noise_std(theta, eps0, delta0) / sizes[t] as f64;
                    log.push(StreamingRound {
                        theta,
                        noise_std: std,
                        batch_size: sizes[t],
                    });
                    Ok((theta, std))
                },
                rng,
            )?;
            Ok((iterates.last().cloned().unwrap_or_default(), log))
        }
    }
}

/// Released statistics of [`dp_ssp_release`].
#[derive(Debug, Clone, PartialEq)]
pub struct SspRelease {
    pub w: Vec<f64>,
    /// Noisy, symmetrized (and if needed eigenvalue-clamped) `X^T X`.
    pub gram: Matrix,
    pub xty: Vec<f64>,
    pub gram_noise_std: f64,
    pub xty_noise_std: f64,
}

/// Sufficient-statistics perturbation: rows clipped to `row_bound`, labels to
/// `label_bound`, half the budget on each of `X^T X` (upper triangle) and
/// `X^T y`, then a least-squares solve.
pub fn dp_ssp_release<R: Rng + ?Sized>(
    data: &Dataset,
    budget: PrivacyBudget,
    row_bound: f64,
    label_bound: f64,
    rng: &mut R,
) -> Result<SspRelease> {
    if !(row_bound > 0.0) {
        return Err(invalid("row_bound", "must be positive"));
    }
    if !(label_bound > 0.0) {
        return Err(invalid("label_bound", "must be positive"));
    }
    let d = data.dim();
    let mut rows = Vec::with_capacity(data.len() * d);
    for i in 0..data.len() {
        rows.extend(clip_vector(data.x(i), row_bound));
    }
    let ys = data.responses().iter().map(|&y| clip_scalar(y, label_bound)).collect();
    let clipped = Dataset::new(Matrix::from_row_major(data.len(), d, rows)?, ys)?;
    let (mut gram, mut xty) = clipped.normal_equations();

    let half = budget.split_even(2);
    let gram_noise_std = gaussian_noise_std(row_bound * row_bound, half.epsilon(), half.delta());
    let xty_noise_std = gaussian_noise_std(row_bound * label_bound, half.epsilon(), half.delta());
    if gram_noise_std > 0.0 {
        for a in 0..d {
            for b in a..d {
                let v = gram[(a, b)] + gram_noise_std * standard_normal(rng);
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
    }
    if xty_noise_std > 0.0 {
        for v in xty.iter_mut() {
            *v += xty_noise_std * standard_normal(rng);
        }
    }
    let eig = SymmetricEigen::new(&gram)?;
    if eig.min() < SSP_EIGEN_FLOOR {
        gram = eig.reconstruct_with(|l| l.max(SSP_EIGEN_FLOOR)).symmetrized();
    }
    let w = solve_spd(&gram, &xty)?;
    Ok(SspRelease {
        w,
        gram,
        xty,
        gram_noise_std,
        xty_noise_std,
    })
}

pub fn dp_ssp<R: Rng + ?Sized>(
    data: &Dataset,
    budget: PrivacyBudget,
    row_bound: f64,
    label_bound: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(dp_ssp_release(data, budget, row_bound, label_bound, rng)?.w)
}
