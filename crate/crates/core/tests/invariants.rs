use dpreg_core::data::{condition_covariance, ModelSpec, NoiseFamily};
use dpreg_core::datagen::{corrupt_labels, sample_linear_model, CorruptionKind, CorruptionSpec};
use dpreg_core::regression::{dp_robust_gd, GdConfig, NormSource, StepSize, ThresholdSource};
use dpreg_core::rng::{seeded, standard_normal_vec};
use dpreg_core::{sigma_norm_error, PrivacyBudget};
use proptest::prelude::*;

fn spec(d: usize, kappa: f64, seed: u64) -> ModelSpec {
    let w = standard_normal_vec(&mut seeded(seed), d);
    ModelSpec::new(w, 0.5, condition_covariance(d, kappa), NoiseFamily::Gaussian, false).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trace_respects_sensitivity_and_noise_formula(seed in 0u64..1_000, eps in 300.0f64..3000.0, corrupt in 0.0f64..0.1) {
        let d = 4;
        let s = spec(d, 2.0, seed);
        let mut rng = seeded(seed ^ 0xabc);
        let clean = sample_linear_model(&s, 6_000, &mut rng).unwrap();
        let attack = CorruptionSpec::new(CorruptionKind::ConstantLabel { value: 50.0 }, corrupt).unwrap();
        let (data, _) = corrupt_labels(&clean, &attack, &mut rng).unwrap();
        let mut cfg = GdConfig::new(12, StepSize::from_lambda_max(2.0), PrivacyBudget::new(eps, 1e-8).unwrap());
        cfg.norm_source = NormSource::Known(condition_covariance(d, 2.0).trace());
        cfg.threshold_source = ThresholdSource::Oracle {
            w_star: s.w_star.clone(),
            metric: s.covariance.clone(),
            sigma: s.sigma,
        };
        let (w, trace) = dp_robust_gd(&data, &cfg, &mut seeded(seed)).unwrap();
        let (eps0, delta0) = (trace.round_budget.epsilon0(), trace.round_budget.delta0());
        let n3 = trace.split_sizes[2] as f64;
        for r in &trace.rounds {
            prop_assert!(r.max_gradient_norm <= trace.big_theta * r.theta + 1e-9);
            let want = (2.0 * (1.25 / delta0).ln()).sqrt() * trace.big_theta * r.theta / (eps0 * n3);
            prop_assert!((r.phi - want).abs() <= 1e-12 * want);
        }
        let (w2, trace2) = dp_robust_gd(&data, &cfg, &mut seeded(seed)).unwrap();
        prop_assert_eq!(w, w2);
        prop_assert_eq!(trace, trace2);
    }

    #[test]
    fn corruption_never_touches_covariates(seed in 0u64..1_000, frac in 0.0f64..0.5, kind in 0usize..2) {
        let s = spec(3, 1.0, seed);
        let mut rng = seeded(seed);
        let data = sample_linear_model(&s, 200, &mut rng).unwrap();
        let kind = if kind == 0 {
            CorruptionKind::ConstantLabel { value: 1e3 }
        } else {
            CorruptionKind::QuantileTargeted { value: -7.0 }
        };
        let (bad, idx) = corrupt_labels(&data, &CorruptionSpec::new(kind, frac).unwrap(), &mut rng).unwrap();
        prop_assert_eq!(idx.len(), (frac * 200.0).floor() as usize);
        let bits = |m: &dpreg_core::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(bad.covariates()), bits(data.covariates()));
    }
}

#[test]
fn zero_noise_error_shrinks_over_kappa_windows() {
    let (d, kappa) = (5, 4.0);
    let s = spec(d, kappa, 3);
    let data = sample_linear_model(&s, 30_000, &mut seeded(3)).unwrap();
    let mut cfg = GdConfig::new(80, StepSize::from_lambda_max(kappa), PrivacyBudget::new(f64::INFINITY, 1e-9).unwrap());
    cfg.clip_scale = 1e6;
    cfg.norm_source = NormSource::Known(s.covariance.trace());
    let (w, trace) = dp_robust_gd(&data, &cfg, &mut seeded(4)).unwrap();
    assert!(trace.rounds.iter().all(|r| r.phi == 0.0 && r.residual_clipped == 0));
    let mut errs: Vec<f64> = trace
        .rounds
        .iter()
        .map(|r| sigma_norm_error(&r.w, &s.w_star, &s.covariance).unwrap())
        .collect();
    errs.push(sigma_norm_error(&w, &s.w_star, &s.covariance).unwrap());
    let k = kappa as usize;
    for t in k..errs.len() - k {
        assert!(errs[t + k] <= errs[t] + 1e-12, "round {t}: {} -> {}", errs[t], errs[t + k]);
    }
}
