mod common;

use common::{draws, ks_critical_1pct, ks_statistic, mean_and_se};
use hka::mc::stream_rng;
use hka::processes::{CirParams, ProcessSpec, State};
use hka::specfun::{integrate, Domain, QuadratureSpec};

const N: usize = 100_000;

fn one_dim_processes() -> Vec<(ProcessSpec, f64)> {
    vec![
        (ProcessSpec::brownian(vec![0.4]).unwrap(), 0.0),
        (ProcessSpec::ornstein_uhlenbeck(-0.3, 1).unwrap(), 0.5),
        (ProcessSpec::cir(1.2, 0.04, 0.35).unwrap(), 0.03),
        (ProcessSpec::cauchy(0.7, vec![0.2]).unwrap(), 0.1),
        (ProcessSpec::GammaSubordinator { eta: 1.5, gamma_rate: 2.0 }, 0.0),
        (ProcessSpec::IgSubordinator { eta: 0.8, gamma_rate: 1.3 }, 0.0),
        (ProcessSpec::variance_gamma(2.5, 1.1).unwrap(), 0.0),
        (ProcessSpec::normal_inverse_gaussian(1.4, 0.9).unwrap(), -0.2),
    ]
}

#[test]
fn chapman_kolmogorov_by_sampling() {
    for (i, (spec, x)) in one_dim_processes().into_iter().enumerate() {
        let mut two = draws(&spec, x, &[0.35, 0.9], N, 100 + i as u64);
        let mut one = draws(&spec, x, &[1.25], N, 200 + i as u64);
        let d = ks_statistic(&mut two, &mut one);
        assert!(d < ks_critical_1pct(N, N), "{}: D = {d}", spec.tag());
    }
}

#[test]
fn cauchy_is_self_similar() {
    let spec = ProcessSpec::cauchy(1.3, vec![0.5]).unwrap();
    let a = 2.5;
    let mut long = draws(&spec, 0.0, &[a * 0.6], N, 5);
    let mut scaled: Vec<f64> = draws(&spec, 0.0, &[0.6], N, 6).into_iter().map(|z| a * z).collect();
    let d = ks_statistic(&mut long, &mut scaled);
    assert!(d < ks_critical_1pct(N, N), "D = {d}");
}

#[test]
fn vg_and_nig_are_symmetric() {
    for (i, spec) in [
        ProcessSpec::variance_gamma(0.7, 1.8).unwrap(),
        ProcessSpec::normal_inverse_gaussian(0.6, 2.2).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let mut xs = draws(&spec, 0.0, &[1.0], N, 30 + i as u64);
        let mut flipped = draws(&spec, 0.0, &[1.0], N, 40 + i as u64).into_iter().map(|v| -v).collect::<Vec<_>>();
        let d = ks_statistic(&mut xs, &mut flipped);
        assert!(d < ks_critical_1pct(N, N), "{}: D = {d}", spec.tag());
    }
}

#[test]
fn standard_normal_sample_mean() {
    let spec = ProcessSpec::brownian(vec![0.0]).unwrap();
    let xs = draws(&spec, 0.0, &[1.0], 1_000_000, 1);
    let (m, se) = mean_and_se(&xs);
    assert!(m.abs() < 4.0 * se, "{m} ± {se}");
}

#[test]
fn ou_mean_grows_under_negative_speed() {
    let spec = ProcessSpec::ornstein_uhlenbeck(-0.5, 1).unwrap();
    let xs = draws(&spec, 1.0, &[2.0], 1_000_000, 2);
    let (m, se) = mean_and_se(&xs);
    let expected = (0.5f64 * 2.0).exp();
    assert!((m - expected).abs() < 4.0 * se, "{m} vs {expected} (se {se})");
}

#[test]
fn cir_moments_match_noncentral_chi_square() {
    let cir = CirParams::new(0.9, 0.06, 0.4).unwrap();
    let spec = ProcessSpec::Cir(cir);
    let (x, t) = (0.1, 0.75);
    let xs = draws(&spec, x, &[t], 1_000_000, 3);
    let (m, se) = mean_and_se(&xs);
    assert!((m - cir.conditional_mean(t, x)).abs() < 4.0 * se);
    let sq: Vec<f64> = xs.iter().map(|v| (v - cir.conditional_mean(t, x)).powi(2)).collect();
    let (v, se_v) = mean_and_se(&sq);
    assert!((v - cir.conditional_variance(t, x)).abs() < 4.0 * se_v, "{v} vs {}", cir.conditional_variance(t, x));
    assert!(xs.iter().all(|&v| v >= 0.0));
}

#[test]
fn cir_transform_matches_monte_carlo() {
    let mut rng = stream_rng(99, 0);
    for k in 0..4 {
        let u = -0.5 - 3.0 * rand::Rng::random::<f64>(&mut rng);
        let t = 0.2 + 2.0 * rand::Rng::random::<f64>(&mut rng);
        let x = 0.5 * rand::Rng::random::<f64>(&mut rng);
        let cir = CirParams::new(0.7, 0.2, 0.5).unwrap();
        let spec = ProcessSpec::Cir(cir);
        let ys: Vec<f64> = draws(&spec, x, &[t], 1_000_000, 70 + k).into_iter().map(|y| (u * y).exp()).collect();
        let (m, se) = mean_and_se(&ys);
        let exact = cir.exp_transform(u, t, x).unwrap();
        assert!((m - exact).abs() < 3.0 * se, "u={u} t={t} x={x}: {m} vs {exact}");
    }
}

#[test]
fn transition_densities_integrate_to_one() {
    let spec = QuadratureSpec::default();
    for (p, x) in [
        (ProcessSpec::brownian(vec![0.7]).unwrap(), 0.3),
        (ProcessSpec::ornstein_uhlenbeck(-0.4, 1).unwrap(), -1.0),
        (ProcessSpec::cauchy(0.9, vec![-0.3]).unwrap(), 0.2),
    ] {
        let mass = integrate(|y| p.transition_density(1.3, &[x], &[y]).unwrap(), Domain::Whole, &spec).unwrap();
        assert!((mass.value - 1.0).abs() < 1e-6, "{}: {}", p.tag(), mass.value);
    }
}

#[test]
fn sample_path_mirrors_transitions() {
    let spec = ProcessSpec::cir(1.0, 0.05, 0.2).unwrap();
    let path = hka::processes::sample_path(&spec, &State::scalar(0.04), &[0.0, 0.5, 1.0, 2.0], 8).unwrap();
    assert_eq!(path.states.len(), 4);
    assert!(path.states.iter().all(|s| s[0] >= 0.0));
    assert!(hka::processes::sample_path(&spec, &State::scalar(-1.0), &[0.0, 1.0], 8).is_err());
}
