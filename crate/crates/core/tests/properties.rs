use hka::calib::CalibrationFamily;
use hka::cli::{default_init, ModelConfig};
use hka::kernels::{KernelSpec, Model, TraceFamily};
use hka::mc::{estimate_with, Execution, Welford};
use hka::pricing::{bond_price, short_rate};
use hka::processes::State;
use hka::specfun::{bessel_k, bs_integral, gaussian_quadratic_integral, inverse_normal_cdf, normal_cdf};
use proptest::prelude::*;
use rand::Rng;

fn trace_family() -> impl Strategy<Value = TraceFamily> {
    prop_oneof![
        Just(TraceFamily::GaussHeat),
        (0.2..2.0f64).prop_map(|alpha| TraceFamily::QuadGauss { alpha }),
        (0.2..2.0f64).prop_map(|theta| TraceFamily::CauchySym { theta }),
        (0.2..2.0f64).prop_map(|gamma| TraceFamily::VarianceGamma { eta: 3.0, gamma }),
        (0.2..2.0f64, 0.2..2.0f64).prop_map(|(eta, gamma)| TraceFamily::Nig { eta, gamma }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_bonds_lie_in_unit_interval(
        family in trace_family(),
        lambda in 0.2..5.0f64,
        c in 2.01..20.0f64,
        t in 0.0..5.0f64,
        tau in 0.0..20.0f64,
        x in -5.0..5.0f64,
    ) {
        let model = Model::new(KernelSpec::Trace { family, lambda, c }, family.driver(1), State::scalar(0.0)).unwrap();
        let p = bond_price(&model, t, t + tau, &State::scalar(x)).unwrap();
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(short_rate(&model, t, &State::scalar(x)).unwrap() >= -1e-8);
    }

    // Above x = 4, Phi(x) is too close to 1 for the quantile to resolve x.
    #[test]
    fn normal_quantile_inverts_cdf(x in -8.0..4.0f64) {
        let back = inverse_normal_cdf(normal_cdf(x)).unwrap();
        prop_assert!((back - x).abs() < 1e-8 * (1.0 + x.abs()));
    }

    #[test]
    fn bs_integral_dominates_intrinsic_value(a in 0.01..5.0f64, b in 0.0..5.0f64, c in 0.01..2.0f64, d in -1.0..1.0f64) {
        let v = bs_integral(a, b, c, d).unwrap();
        // Jensen: E[(a e^{cZ+d} - b)^+] >= (a e^{d + c^2/2} - b)^+.
        prop_assert!(v >= (a * (d + 0.5 * c * c).exp() - b).max(0.0) - 1e-12);
        prop_assert!(v <= a * (d + 0.5 * c * c).exp() + 1e-12);
    }

    #[test]
    fn gaussian_quadratic_integral_is_additive(m in -1.0..1.0f64, v in 0.1..2.0f64, mu in -2.0..0.0f64, a in -3.0..0.0f64, w in 0.0..3.0f64, w2 in 0.0..3.0f64) {
        let b = a + w;
        let c = b + w2;
        let whole = gaussian_quadratic_integral(m, v, mu, a, c).unwrap();
        let parts = gaussian_quadratic_integral(m, v, mu, a, b).unwrap() + gaussian_quadratic_integral(m, v, mu, b, c).unwrap();
        prop_assert!((whole - parts).abs() < 1e-13);
        prop_assert!(whole <= gaussian_quadratic_integral(m, v, mu, f64::NEG_INFINITY, f64::INFINITY).unwrap() + 1e-15);
    }

    #[test]
    fn bessel_k_is_positive_and_decreasing(p in 0.0..5.0f64, x in 0.01..30.0f64, dx in 0.01..2.0f64) {
        let k1 = bessel_k(p, x).unwrap();
        let k2 = bessel_k(p, x + dx).unwrap();
        prop_assert!(k1 > 0.0 && k2 > 0.0 && k2 < k1);
    }

    #[test]
    fn welford_merge_order_is_irrelevant_up_to_rounding(xs in prop::collection::vec(-1e3..1e3f64, 2..200), split in 0usize..200) {
        let split = split.min(xs.len());
        let mut whole = Welford::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (Welford::default(), Welford::default());
        xs[..split].iter().for_each(|&x| a.push(x));
        xs[split..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.n, whole.n);
        prop_assert!((a.mean - whole.mean).abs() < 1e-9);
        prop_assert!((a.variance() - whole.variance()).abs() < 1e-6 * whole.variance().max(1.0));
    }

    #[test]
    fn monte_carlo_is_independent_of_worker_count(n in 2usize..20_000, seed in any::<u64>(), threads in 1usize..9) {
        let f = |rng: &mut hka::mc::SimRng| Ok(rng.random::<f64>().powi(3));
        let base = estimate_with(n, seed, Execution::Sequential, f).unwrap();
        let other = estimate_with(n, seed, Execution::with_threads(threads), f).unwrap();
        prop_assert_eq!(base.mean.to_bits(), other.mean.to_bits());
        prop_assert_eq!(base.stderr.to_bits(), other.stderr.to_bits());
    }

    #[test]
    fn fitted_configs_survive_serialization(scale in 0.8..1.2f64) {
        for family in [CalibrationFamily::TraceGaussHeat, CalibrationFamily::TraceCauchy, CalibrationFamily::AffineCir] {
            let params: Vec<f64> = default_init(family).iter().map(|v| v * scale).collect();
            let cfg = ModelConfig::from_fit(family, &params);
            let text = cfg.to_toml().unwrap();
            prop_assert_eq!(ModelConfig::from_toml(&text).unwrap(), cfg);
        }
    }
}
