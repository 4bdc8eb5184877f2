//! Clipping, the Σ-norm error metric and the order statistics used by the
//! distance estimator.

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// `x * min(1, a / ||x||)`. Returns `x` unchanged when `||x|| <= a`.
pub fn clip_vector(x: &[f64], a: f64) -> Vec<f64> {
    let n = norm(x);
    if n <= a {
        x.to_vec()
    } else {
        let s = a / n;
        x.iter().map(|v| v * s).collect()
    }
}

/// Scalar clip: `sign(r) * min(|r|, a)`.
pub fn clip_scalar(r: f64, a: f64) -> f64 {
    r.clamp(-a, a)
}

/// `||w - w*||_Σ = sqrt((w - w*)^T Σ (w - w*))`.
pub fn sigma_norm_error(w: &[f64], w_star: &[f64], covariance: &Matrix) -> Result<f64> {
    if w.len() != w_star.len() {
        return Err(Error::DimensionMismatch {
            what: "estimate vs w*",
            expected: w_star.len(),
            got: w.len(),
        });
    }
    if covariance.rows() != w.len() || covariance.cols() != w.len() {
        return Err(Error::DimensionMismatch {
            what: "metric matrix",
            expected: w.len(),
            got: covariance.rows(),
        });
    }
    let diff: Vec<f64> = w.iter().zip(w_star).map(|(a, b)| a - b).collect();
    Ok(covariance.quad_form(&diff)?.max(0.0).sqrt())
}

/// Index of the nearest-rank `q`-quantile in a sorted slice of length `m`.
pub fn nearest_rank_index(m: usize, q: f64) -> usize {
    let rank = (q * m as f64).ceil() as i64 - 1;
    rank.clamp(0, m as i64 - 1) as usize
}

/// Nearest-rank quantile: sorted element at `ceil(q m) - 1`, clamped to the ends.
pub fn quantile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), q)])
}

/// Sum of the values `<= threshold`, divided by the full count.
pub fn trimmed_mean_below(values: &[f64], threshold: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("trimmed mean input"));
    }
    let kept: f64 = values.iter().filter(|&&v| v <= threshold).sum();
    Ok(kept / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_vector_examples() {
        assert_eq!(clip_vector(&[2.0, 0.0], 1.0), vec![1.0, 0.0]);
        assert_eq!(clip_vector(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip_vector(&[0.0, 0.0], 5.0), vec![0.0, 0.0]);
        assert_eq!(clip_vector(&[3.0, 4.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn clip_scalar_examples() {
        assert_eq!(clip_scalar(-7.0, 3.0), -3.0);
        assert_eq!(clip_scalar(2.0, 3.0), 2.0);
        assert_eq!(clip_scalar(0.0, 0.0), 0.0);
    }

    #[test]
    fn sigma_norm_examples() {
        let w = [0.5, -1.0];
        assert_eq!(sigma_norm_error(&w, &w, &Matrix::identity(2)).unwrap(), 0.0);
        assert_eq!(sigma_norm_error(&[3.0, 4.0], &[0.0, 0.0], &Matrix::identity(2)).unwrap(), 5.0);
        // diag(4,1), diff (1,1): quadratic form 5; Σ^{1/2} diff = (2,1) has norm sqrt(5) too.
        let e = sigma_norm_error(&[1.0, 1.0], &[0.0, 0.0], &Matrix::from_diag(&[4.0, 1.0])).unwrap();
        assert!((e - 2.2360679).abs() < 1e-7);
        assert!((e - (2.0f64 * 2.0 + 1.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sigma_norm_dimension_mismatch() {
        assert!(sigma_norm_error(&[1.0], &[1.0, 2.0], &Matrix::identity(2)).is_err());
        assert!(sigma_norm_error(&[1.0, 2.0], &[1.0, 2.0], &Matrix::identity(3)).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile_nearest_rank(&[5.0, 1.0, 3.0], 1.0).unwrap(), 5.0);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile_nearest_rank(&ten, 0.7).unwrap(), 7.0);
        assert_eq!(quantile_nearest_rank(&[4.0], 0.25).unwrap(), 4.0);
        assert_eq!(quantile_nearest_rank(&[5.0, 1.0, 3.0], 0.0).unwrap(), 1.0);
        assert!(quantile_nearest_rank(&[], 0.5).is_err());
    }

    #[test]
    fn trimmed_mean_examples() {
        assert_eq!(trimmed_mean_below(&[1.0, 2.0, 1000.0], 2.0).unwrap(), 1.0);
        assert_eq!(trimmed_mean_below(&[1.0, 2.0, 3.0], 10.0).unwrap(), 2.0);
        assert_eq!(trimmed_mean_below(&[5.0, 5.0], 0.0).unwrap(), 0.0);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..12)
    }

    proptest! {
        #[test]
        fn clip_vector_bounded_and_parallel(x in vec_strategy(), a in 0.0f64..100.0) {
            let c = clip_vector(&x, a);
            prop_assert!(norm(&c) <= a + 1e-12);
            if norm(&x) <= a {
                prop_assert_eq!(&c, &x);
            }
            // parallel with nonnegative scale
            let s = if norm(&x) > 0.0 { crate::linalg::dot(&c, &x) / crate::linalg::dot(&x, &x) } else { 0.0 };
            prop_assert!(s >= 0.0);
            for (ci, xi) in c.iter().zip(&x) {
                prop_assert!((ci - s * xi).abs() <= 1e-9 * (1.0 + xi.abs()));
            }
        }

        #[test]
        fn trimmed_at_max_is_mean(x in vec_strategy()) {
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            prop_assert_eq!(trimmed_mean_below(&x, max).unwrap(), mean);
        }

        #[test]
        fn quantile_is_a_member(x in vec_strategy(), q in 0.0f64..=1.0) {
            let v = quantile_nearest_rank(&x, q).unwrap();
            prop_assert!(x.contains(&v));
        }
    }
}
