//! Differential-privacy primitives: budgets and the per-round split, the
//! Gaussian and Laplace mechanisms, and a stability-based histogram over
//! geometric or arithmetic bins.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::rng::{standard_normal, uniform_open};

/// End-to-end `(epsilon, delta)`. `epsilon = +inf` means "no privacy": every
/// mechanism then adds zero noise, which is how oracle runs are expressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    /// `delta = min(1e-6, n^-2)`, the usual choice for `n` records.
    pub fn delta_for(n: usize) -> f64 {
        (1e-6f64).min(1.0 / (n as f64 * n as f64))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }

    /// Even serial split into `parts` mechanisms: `(ε/parts, δ/parts)` each.
    pub fn split_even(&self, parts: usize) -> Self {
        Self {
            epsilon: self.epsilon / parts as f64,
            delta: self.delta / parts as f64,
        }
    }
}

/// Per-round budget from advanced composition over `rounds` accesses:
/// `δ0 = δ/(2T)`, `ε0 = ε/(4 sqrt(T ln(1/δ0)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundBudget {
    epsilon0: f64,
    delta0: f64,
    rounds: usize,
}

impl RoundBudget {
    pub fn derive(budget: PrivacyBudget, rounds: usize) -> Result<Self> {
        if rounds == 0 {
            return Err(invalid("T", "need at least one round"));
        }
        let delta0 = budget.delta / (2.0 * rounds as f64);
        if !(delta0 < 1.0) {
            return Err(invalid("delta", format!("per-round delta {delta0} is not below 1")));
        }
        let epsilon0 = budget.epsilon / (4.0 * (rounds as f64 * (1.0 / delta0).ln()).sqrt());
        Ok(Self {
            epsilon0,
            delta0,
            rounds,
        })
    }

    pub fn epsilon0(&self) -> f64 {
        self.epsilon0
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}

pub fn derive_round_budget(budget: PrivacyBudget, rounds: usize) -> Result<RoundBudget> {
    RoundBudget::derive(budget, rounds)
}

/// Per-coordinate noise std of the Gaussian mechanism:
/// `sensitivity * sqrt(2 ln(1.25/δ)) / ε`.
pub fn gaussian_noise_std(sensitivity: f64, epsilon: f64, delta: f64) -> f64 {
    if sensitivity == 0.0 || epsilon == f64::INFINITY {
        return 0.0;
    }
    sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

/// `value + N(0, std^2 I)` with the std from [`gaussian_noise_std`].
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    value: &[f64],
    sensitivity: f64,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Vec<f64> {
    let std = gaussian_noise_std(sensitivity, epsilon, delta);
    if std == 0.0 {
        return value.to_vec();
    }
    value.iter().map(|v| v + std * standard_normal(rng)).collect()
}

/// Inverse CDF of `Laplace(0, scale)` at `u in (0, 1)`.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

pub fn laplace_noise<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    laplace_from_uniform(uniform_open(rng), scale)
}

/// Bin label. `Zero` is the singleton `[0, 0]` and sorts before every other bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinIndex {
    Zero,
    Index(i64),
}

/// Partition of `[0, inf)` into `{[0,0]}` plus either geometric bins
/// `[b^i, b^{i+1})` or arithmetic bins `(i w, (i+1) w)` (the first one open at 0).
///
/// Geometric edges are stored as `2^(i * log2_width)` so that bases of the form
/// `2^(1/q)` put exact powers of two on bin edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinFamily {
    Geometric { log2_width: f64 },
    Arithmetic { width: f64 },
}

impl BinFamily {
    pub fn geometric(base: f64) -> Result<Self> {
        if !(base > 1.0 && base.is_finite()) {
            return Err(invalid("base", format!("geometric base must exceed 1, got {base}")));
        }
        Ok(Self::Geometric {
            log2_width: base.log2(),
        })
    }

    /// Geometric bins with base `2^(1/per_octave)`.
    pub fn geometric_pow2(per_octave: u32) -> Self {
        Self::Geometric {
            log2_width: 1.0 / per_octave as f64,
        }
    }

    pub fn arithmetic(width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(invalid("width", format!("must be positive, got {width}")));
        }
        Ok(Self::Arithmetic { width })
    }

    fn edge(&self, i: i64) -> f64 {
        match *self {
            Self::Geometric { log2_width } => (i as f64 * log2_width).exp2(),
            Self::Arithmetic { width } => i as f64 * width,
        }
    }

    pub fn index_of(&self, v: f64) -> BinIndex {
        debug_assert!(v >= 0.0, "bin input must be nonnegative");
        if v <= 0.0 {
            return BinIndex::Zero;
        }
        let mut i = match *self {
            Self::Geometric { log2_width } => (v.log2() / log2_width).floor() as i64,
            Self::Arithmetic { width } => (v / width).floor() as i64,
        };
        // Nudge across rounding so that edge(i) <= v < edge(i+1) holds exactly.
        while self.edge(i) > v {
            i -= 1;
        }
        while self.edge(i + 1) <= v {
            i += 1;
        }
        if let Self::Arithmetic { .. } = self {
            // (0, w) holds the positive values below the first edge.
            i = i.max(0);
        }
        BinIndex::Index(i)
    }

    /// `(left, right)` endpoints; the zero bin is `(0, 0)`.
    pub fn bounds(&self, bin: BinIndex) -> (f64, f64) {
        match bin {
            BinIndex::Zero => (0.0, 0.0),
            BinIndex::Index(i) => (self.edge(i), self.edge(i + 1)),
        }
    }

    pub fn left(&self, bin: BinIndex) -> f64 {
        self.bounds(bin).0
    }
}

/// Geometric bin index of `v` for `base > 1`: `Zero` for `v = 0`, otherwise the
/// `i` with `base^i <= v < base^(i+1)`.
pub fn geometric_bin_index(v: f64, base: f64) -> Result<BinIndex> {
    Ok(BinFamily::geometric(base)?.index_of(v))
}

/// Noise and threshold constants of the stability-based histogram. With `m`
/// points the Laplace scale on each proportion is `noise_numerator/(ε m)` and a
/// bin survives when its noisy proportion reaches
/// `threshold_numerator * ln(2/δ)/(ε m) + 1/m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramConfig {
    pub noise_numerator: f64,
    pub threshold_numerator: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            noise_numerator: 2.0,
            threshold_numerator: 2.0,
        }
    }
}

impl HistogramConfig {
    pub fn laplace_scale(&self, epsilon: f64, m: usize) -> f64 {
        self.noise_numerator / (epsilon * m as f64)
    }

    pub fn threshold(&self, epsilon: f64, delta: f64, m: usize) -> f64 {
        self.threshold_numerator * (2.0 / delta).ln() / (epsilon * m as f64) + 1.0 / m as f64
    }
}

/// Output of [`stable_histogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRelease {
    /// Noisy proportion of every bin that was nonempty before noise; bins below
    /// the threshold are reported as zero.
    pub noisy_proportions: BTreeMap<BinIndex, f64>,
    pub argmax: Option<BinIndex>,
    /// Endpoints of `argmax`.
    pub argmax_bin: Option<(f64, f64)>,
}

/// Counts per nonempty bin (no noise).
pub fn raw_histogram(points: &[f64], bins: &BinFamily) -> BTreeMap<BinIndex, usize> {
    let mut counts = BTreeMap::new();
    for &p in points {
        *counts.entry(bins.index_of(p)).or_insert(0) += 1;
    }
    counts
}

/// Stability-based private histogram: Laplace noise on the proportions of
/// nonempty bins only, then thresholding. The released mode is the surviving
/// bin with the largest noisy proportion; ties go to the smaller left endpoint.
pub fn stable_histogram<R: Rng + ?Sized>(
    points: &[f64],
    bins: &BinFamily,
    epsilon: f64,
    delta: f64,
    config: &HistogramConfig,
    rng: &mut R,
) -> HistogramRelease {
    let m = points.len();
    if m == 0 {
        return HistogramRelease {
            noisy_proportions: BTreeMap::new(),
            argmax: None,
            argmax_bin: None,
        };
    }
    if delta >= 1.0 / m as f64 {
        log::warn!("stable histogram: delta {delta:e} is not below 1/m = {:e}", 1.0 / m as f64);
    }
    let scale = config.laplace_scale(epsilon, m);
    let threshold = config.threshold(epsilon, delta, m);
    let mut noisy_proportions = BTreeMap::new();
    let mut best: Option<(BinIndex, f64)> = None;
    // BTreeMap iterates bins by ascending left endpoint, so strict `>` keeps
    // the leftmost bin among ties and the noise draw order is fixed.
    for (bin, count) in raw_histogram(points, bins) {
        let p = count as f64 / m as f64;
        let noise = if scale > 0.0 { laplace_noise(scale, rng) } else { 0.0 };
        let noisy = p + noise;
        let released = if noisy >= threshold { noisy } else { 0.0 };
        noisy_proportions.insert(bin, released);
        if released > 0.0 && best.is_none_or(|(_, b)| released > b) {
            best = Some((bin, released));
        }
    }
    let argmax = best.map(|(b, _)| b);
    HistogramRelease {
        noisy_proportions,
        argmax,
        argmax_bin: argmax.map(|b| bins.bounds(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn round_budget_delta0() {
        let b = PrivacyBudget::new(1.0, 1e-6).unwrap();
        let r = derive_round_budget(b, 10).unwrap();
        assert_eq!(r.delta0(), 5e-8);
    }

    #[test]
    fn round_budget_single_round() {
        // ln(1/5e-7) = 14.5087, sqrt = 3.8090, eps0 = 1/15.236 = 0.06563
        let r = derive_round_budget(PrivacyBudget::new(1.0, 1e-6).unwrap(), 1).unwrap();
        assert_eq!(r.delta0(), 5e-7);
        assert!((r.epsilon0() - 1.0 / 15.236).abs() < 1e-5, "{}", r.epsilon0());
        assert!((r.epsilon0() - 0.06566).abs() < 5e-4);
    }

    #[test]
    fn round_budget_linear_in_epsilon() {
        let one = derive_round_budget(PrivacyBudget::new(1.0, 1e-5).unwrap(), 7).unwrap();
        let two = derive_round_budget(PrivacyBudget::new(2.0, 1e-5).unwrap(), 7).unwrap();
        assert_eq!(two.epsilon0(), 2.0 * one.epsilon0());
        assert_eq!(two.delta0(), one.delta0());
    }

    #[test]
    fn round_budget_rejects_zero_rounds() {
        assert!(derive_round_budget(PrivacyBudget::new(1.0, 1e-5).unwrap(), 0).is_err());
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-6).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(f64::NAN, 0.1).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY, 0.1).is_ok());
    }

    #[test]
    fn gaussian_std_formula() {
        // ln(1.25/1e-5) = 11.7361; sqrt(2 * 11.7361) = 4.84481
        let s = gaussian_noise_std(1.0, 1.0, 1e-5);
        assert!((s - (2.0f64 * 11.736069).sqrt()).abs() < 1e-6, "{s}");
        assert!((s - 4.8458).abs() < 2e-3);
        assert_eq!(gaussian_noise_std(0.0, 1.0, 1e-5), 0.0);
        assert_eq!(gaussian_noise_std(1.0, f64::INFINITY, 1e-5), 0.0);
    }

    #[test]
    fn zero_sensitivity_is_identity() {
        let mut rng = seeded(3);
        let v = vec![1.5, -2.0, 1e9];
        assert_eq!(gaussian_mechanism(&v, 0.0, 1.0, 1e-5, &mut rng), v);
    }

    #[test]
    fn laplace_median_is_zero() {
        assert_eq!(laplace_from_uniform(0.5, 3.0), 0.0);
        assert!(laplace_from_uniform(0.25, 1.0) < 0.0);
        assert!(laplace_from_uniform(0.75, 1.0) > 0.0);
    }

    #[test]
    fn laplace_mean_near_zero() {
        let mut rng = seeded(11);
        let n = 100_000;
        let scale = 2.5;
        let mean = (0..n).map(|_| laplace_noise(scale, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 3.0 * scale * (2.0 / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn laplace_two_scale_tail() {
        let mut rng = seeded(12);
        let n = 100_000;
        let hits = (0..n).filter(|_| laplace_noise(1.0, &mut rng).abs() >= 2.0).count();
        let p = hits as f64 / n as f64;
        assert!((p - (-2.0f64).exp()).abs() <= 0.01, "p {p}");
    }

    #[test]
    fn geometric_index_examples() {
        assert_eq!(geometric_bin_index(1.0, 2.0).unwrap(), BinIndex::Index(0));
        assert_eq!(geometric_bin_index(0.0, 2.0).unwrap(), BinIndex::Zero);
        assert_eq!(geometric_bin_index(3.0, 2.0).unwrap(), BinIndex::Index(1));
        assert_eq!(geometric_bin_index(0.75, 2.0).unwrap(), BinIndex::Index(-1));
        assert!(geometric_bin_index(1.0, 1.0).is_err());
    }

    #[test]
    fn quarter_octave_powers_of_two_are_left_edges() {
        let bins = BinFamily::geometric_pow2(4);
        assert_eq!(bins.index_of(4.0), BinIndex::Index(8));
        assert_eq!(bins.left(BinIndex::Index(8)), 4.0);
        assert_eq!(bins.left(BinIndex::Index(-4)), 0.5);
    }

    #[test]
    fn arithmetic_bins() {
        let bins = BinFamily::arithmetic(0.5).unwrap();
        assert_eq!(bins.index_of(0.0), BinIndex::Zero);
        assert_eq!(bins.index_of(0.1), BinIndex::Index(0));
        assert_eq!(bins.index_of(0.5), BinIndex::Index(1));
        assert_eq!(bins.bounds(BinIndex::Index(1)), (0.5, 1.0));
    }

    #[test]
    fn single_bin_mass() {
        let mut rng = seeded(5);
        let pts = vec![3.0; 5000];
        let rel = stable_histogram(&pts, &BinFamily::geometric(2.0).unwrap(), 1.0, 1e-6, &HistogramConfig::default(), &mut rng);
        assert_eq!(rel.argmax, Some(BinIndex::Index(1)));
        assert_eq!(rel.argmax_bin, Some((2.0, 4.0)));
        assert!((rel.noisy_proportions[&BinIndex::Index(1)] - 1.0).abs() < 0.01);
    }

    #[test]
    fn too_few_points_release_nothing() {
        let mut rng = seeded(5);
        let pts = vec![3.0; 20];
        let rel = stable_histogram(&pts, &BinFamily::geometric(2.0).unwrap(), 0.1, 1e-6, &HistogramConfig::default(), &mut rng);
        assert_eq!(rel.argmax, None);
        assert_eq!(rel.argmax_bin, None);
        assert_eq!(rel.noisy_proportions.len(), 1);
    }

    #[test]
    fn empty_input_releases_nothing() {
        let mut rng = seeded(5);
        let rel = stable_histogram(&[], &BinFamily::geometric(2.0).unwrap(), 1.0, 1e-6, &HistogramConfig::default(), &mut rng);
        assert!(rel.argmax.is_none());
    }

    #[test]
    fn ties_go_to_the_left() {
        let mut rng = seeded(5);
        let mut pts = vec![1.5; 50];
        pts.extend(vec![5.0; 50]);
        let rel = stable_histogram(&pts, &BinFamily::geometric(2.0).unwrap(), f64::INFINITY, 1e-6, &HistogramConfig::default(), &mut rng);
        assert_eq!(rel.argmax, Some(BinIndex::Index(0)));
    }

    #[test]
    fn dominant_bin_wins_under_noise() {
        let m = 10_000;
        let mut pts = vec![1.5; 9 * m / 10];
        pts.extend(vec![5.0; m / 10]);
        let bins = BinFamily::geometric(2.0).unwrap();
        let wins = (0..1000)
            .filter(|&t| {
                let mut rng = seeded(1000 + t);
                stable_histogram(&pts, &bins, 1.0, 1e-6, &HistogramConfig::default(), &mut rng).argmax
                    == Some(BinIndex::Index(0))
            })
            .count();
        assert!(wins >= 990, "wins {wins}");
    }

    #[test]
    fn same_seed_same_release() {
        let pts: Vec<f64> = (0..2000).map(|i| (i % 37) as f64 * 0.3).collect();
        let bins = BinFamily::geometric(2.0).unwrap();
        let a = stable_histogram(&pts, &bins, 0.5, 1e-6, &HistogramConfig::default(), &mut seeded(9));
        let b = stable_histogram(&pts, &bins, 0.5, 1e-6, &HistogramConfig::default(), &mut seeded(9));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn geometric_index_brackets_value(v in 1e-200f64..1e200, base in 1.01f64..16.0) {
            let bins = BinFamily::geometric(base).unwrap();
            let (lo, hi) = bins.bounds(bins.index_of(v));
            prop_assert!(lo <= v && v < hi, "{lo} <= {v} < {hi}");
        }

        #[test]
        fn round_budget_monotone(eps in 0.01f64..10.0, t in 1usize..500) {
            let b = PrivacyBudget::new(eps, 1e-6).unwrap();
            let r = derive_round_budget(b, t).unwrap();
            let r_more_eps = derive_round_budget(PrivacyBudget::new(eps * 1.5, 1e-6).unwrap(), t).unwrap();
            let r_more_t = derive_round_budget(b, t + 1).unwrap();
            prop_assert!(r_more_eps.epsilon0() > r.epsilon0());
            prop_assert!(r_more_t.epsilon0() < r.epsilon0());
            prop_assert!(r_more_t.delta0() < r.delta0());
        }
    }
}
