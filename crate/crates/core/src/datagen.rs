//! Synthetic regression data, label-corruption adversaries, the two-instance
//! hard problem and an empirical resilience audit.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{Dataset, ModelSpec, NoiseFamily};
use crate::error::{invalid, Result};
use crate::linalg::{dot, inv_sqrt_spd, norm, Cholesky, Matrix, SymmetricEigen};
use crate::rng::{sign, standard_normal, standard_normal_vec, uniform_open, uniform_range};

/// Uniform draw from the unit sphere in `R^d`.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v = standard_normal_vec(rng, d);
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Symmetrized Lomax draw with tail index `k + 1`, scaled to unit variance.
fn heavy_tailed_unit<R: Rng + ?Sized>(k: u32, rng: &mut R) -> f64 {
    let k = k as f64;
    let magnitude = uniform_open(rng).powf(-1.0 / (k + 1.0)) - 1.0;
    let variance = 2.0 / (k * (k - 1.0));
    sign(rng) * magnitude / variance.sqrt()
}

/// Standard deviation of the label noise under `spec`.
pub fn noise_std(spec: &ModelSpec) -> f64 {
    match spec.noise_family {
        NoiseFamily::Uniform => spec.sigma / 3f64.sqrt(),
        NoiseFamily::Gaussian | NoiseFamily::HeavyTailed { .. } => spec.sigma,
    }
}

/// `n` rows of `y = <x, w*> + z` with `x ~ N(0, Σ)` (optionally normalized to
/// unit length) and `z` from the configured noise family.
pub fn sample_linear_model<R: Rng + ?Sized>(spec: &ModelSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim();
    let chol = Cholesky::new(&spec.covariance)?;
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = chol.lower_mul(&standard_normal_vec(rng, d));
        if spec.project_covariates_to_sphere {
            let len = norm(&x);
            if len > 0.0 {
                x.iter_mut().for_each(|v| *v /= len);
            }
        }
        let z = match spec.noise_family {
            NoiseFamily::Gaussian => spec.sigma * standard_normal(rng),
            NoiseFamily::Uniform => uniform_range(rng, -spec.sigma, spec.sigma),
            NoiseFamily::HeavyTailed { k, .. } => spec.sigma * heavy_tailed_unit(k, rng),
        };
        ys.push(dot(&x, &spec.w_star) + z);
        xs.extend(x);
    }
    Dataset::new(Matrix::from_row_major(n, d, xs)?, ys)
}

/// What the adversary does to the labels it picks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionKind {
    /// Uniformly random rows get label `value`.
    ConstantLabel { value: f64 },
    /// The rows with the smallest covariate norms get label `value`.
    QuantileTargeted { value: f64 },
    /// Relabels the atom rows of a hard-instance sample drawn with `sign`.
    InstanceFlip { sign: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub fraction: f64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, fraction: f64) -> Result<Self> {
        let spec = Self { kind, fraction };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction >= 0.0 && self.fraction < 0.5) {
            return Err(invalid("fraction", format!("must lie in [0, 0.5), got {}", self.fraction)));
        }
        match self.kind {
            CorruptionKind::ConstantLabel { value } | CorruptionKind::QuantileTargeted { value } if !value.is_finite() => {
                Err(invalid("value", "corrupted label must be finite"))
            }
            CorruptionKind::InstanceFlip { sign } if sign.abs() != 1.0 => {
                Err(invalid("sign", format!("must be +1 or -1, got {sign}")))
            }
            _ => Ok(()),
        }
    }
}

/// Applies `spec` to a copy of `data`. Covariates are never touched. Returns
/// the corrupted copy and the sorted indices of the rewritten rows.
pub fn corrupt_labels<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let n = data.len();
    let count = (spec.fraction * n as f64).floor() as usize;
    let (value, mut picked) = match spec.kind {
        CorruptionKind::InstanceFlip { sign } => return Ok(instance_flip_corrupt(data, sign)),
        CorruptionKind::ConstantLabel { value } => (value, sample(rng, n, count).into_vec()),
        CorruptionKind::QuantileTargeted { value } => {
            let norms: Vec<f64> = (0..n).map(|i| norm(data.x(i))).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
            order.truncate(count);
            (value, order)
        }
    };
    picked.sort_unstable();
    let mut ys = data.responses().to_vec();
    for &i in &picked {
        ys[i] = value;
    }
    Ok((data.with_responses(ys)?, picked))
}

/// Second-coordinate law of the hard instance: `±1` with total mass `α`,
/// otherwise uniform on `[-σ, σ]`.
pub fn hard_instance_sample<R: Rng + ?Sized>(
    alpha: f64,
    sigma: f64,
    sign_s: f64,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid("alpha", format!("must lie in (0, 0.5), got {alpha}")));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid("sigma", format!("must lie in (0, 1), got {sigma}")));
    }
    if sign_s.abs() != 1.0 {
        return Err(invalid("sign", format!("must be +1 or -1, got {sign_s}")));
    }
    let mut xs = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = uniform_range(rng, -1.0, 1.0);
        let atom = crate::rng::uniform(rng) < alpha;
        let x2 = if atom {
            sign(rng)
        } else {
            uniform_range(rng, -sigma, sigma)
        };
        let z = uniform_range(rng, -sigma, sigma);
        xs.extend([x1, x2]);
        ys.push(x1 + sign_s * x2 + z);
    }
    Dataset::new(Matrix::from_row_major(n, 2, xs)?, ys)
}

/// Population covariance of the hard instance: `diag(1/3, α + (1-α)σ²/3)`.
pub fn hard_instance_covariance(alpha: f64, sigma: f64) -> Matrix {
    Matrix::from_diag(&[1.0 / 3.0, alpha + (1.0 - alpha) * sigma * sigma / 3.0])
}

/// Turns a hard-instance sample drawn with `sign_s` into one consistent with
/// `-sign_s` by relabeling the atom rows (`x2 = ±1`): `y -> y - 2 s x2`.
pub fn instance_flip_corrupt(data: &Dataset, sign_s: f64) -> (Dataset, Vec<usize>) {
    let mut ys = data.responses().to_vec();
    let mut picked = Vec::new();
    for (i, y) in ys.iter_mut().enumerate() {
        let x2 = data.x(i)[1];
        if x2.abs() == 1.0 {
            *y -= 2.0 * sign_s * x2;
            picked.push(i);
        }
    }
    let out = data.with_responses(ys).expect("finite labels stay finite");
    (out, picked)
}

/// Empirical resilience constants: the largest deviation found over the
/// audited subsets for each of the four conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResilienceProfile {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub rho4: f64,
    pub alpha: f64,
}

/// The four deviations of one subset, each already maximized over directions.
fn subset_deviations(
    data: &Dataset,
    subset: &[usize],
    w_star: &[f64],
    whiten: &Matrix,
    sigma: f64,
) -> Result<[f64; 4]> {
    let d = data.dim();
    let m = subset.len() as f64;
    let mut mean_xr = vec![0.0; d];
    let mut mean_x = vec![0.0; d];
    let mut second = Matrix::zeros(d, d);
    let mut mean_r2 = 0.0;
    for &i in subset {
        let x = data.x(i);
        let r = data.y(i) - dot(x, w_star);
        for a in 0..d {
            mean_xr[a] += x[a] * r;
            mean_x[a] += x[a];
            for b in 0..d {
                second[(a, b)] += x[a] * x[b];
            }
        }
        mean_r2 += r * r;
    }
    mean_xr.iter_mut().chain(mean_x.iter_mut()).for_each(|v| *v /= m);
    let second = second.scaled(1.0 / m);
    let rho1 = norm(&whiten.matvec(&mean_xr)?) / sigma;
    let white_second = whiten.matmul(&second)?.matmul(whiten)?.sub(&Matrix::identity(d))?;
    let eig = SymmetricEigen::new(&white_second.symmetrized())?;
    let rho2 = eig.max().abs().max(eig.min().abs());
    let rho3 = (mean_r2 / m - sigma * sigma).abs() / (sigma * sigma);
    let rho4 = norm(&whiten.matvec(&mean_x)?);
    Ok([rho1, rho2, rho3, rho4])
}

fn binomial_saturating(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Advances `c` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Lower-bound audit of the resilience constants of clean `data` with respect
/// to `spec`, over subsets of size `ceil((1-α) n)`.
///
/// For each subset the supremum over directions is attained in closed form
/// (a whitened norm or a spectral norm). When `trials` is at least the number
/// of such subsets, every subset is enumerated; otherwise `trials` subsets are
/// drawn uniformly.
pub fn resilience_audit<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &ModelSpec,
    alpha: f64,
    trials: usize,
    rng: &mut R,
) -> Result<ResilienceProfile> {
    spec.validate()?;
    if !(alpha >= 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", format!("must lie in [0, 1), got {alpha}")));
    }
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    if data.is_empty() {
        return Err(crate::error::Error::Empty("audit data"));
    }
    if data.dim() != spec.dim() {
        return Err(crate::error::Error::DimensionMismatch {
            what: "data vs model dimension",
            expected: spec.dim(),
            got: data.dim(),
        });
    }
    let n = data.len();
    let m = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n);
    let whiten = inv_sqrt_spd(&spec.covariance)?;
    let sigma = noise_std(spec);
    let mut best = [0.0f64; 4];
    let mut absorb = |subset: &[usize]| -> Result<()> {
        let dev = subset_deviations(data, subset, &spec.w_star, &whiten, sigma)?;
        for (b, v) in best.iter_mut().zip(dev) {
            *b = b.max(v);
        }
        Ok(())
    };
    if trials >= binomial_saturating(n, m) {
        let mut c: Vec<usize> = (0..m).collect();
        loop {
            absorb(&c)?;
            if !next_combination(&mut c, n) {
                break;
            }
        }
    } else {
        for _ in 0..trials {
            absorb(&sample(rng, n, m).into_vec())?;
        }
    }
    Ok(ResilienceProfile {
        rho1: best[0],
        rho2: best[1],
        rho3: best[2],
        rho4: best[3],
        alpha,
    })
}
