use hka::kernels::{Eigenfunction, KernelSpec, Model, TraceFamily};
use hka::mc::Execution;
use hka::pricing::{
    bond_price, derivative_price, swap_rate, swaption_eigen_closed, swaption_price_mc, SwaptionSpec, TenorStructure,
};
use hka::processes::{CirParams, ProcessSpec, State};

fn models() -> Vec<(&'static str, Model)> {
    let cir = CirParams::new(0.8, 0.05, 0.25).unwrap();
    let mut out = vec![
        (
            "affine_cir",
            Model::new(
                KernelSpec::AffineExpSum {
                    a: vec![1.0, 0.5],
                    mu: vec![-0.5, -1.5],
                    cir,
                },
                ProcessSpec::Cir(cir),
                State::scalar(0.05),
            )
            .unwrap(),
        ),
        (
            "eigen_bm",
            Model::new(
                KernelSpec::Eigen {
                    mu: -0.3,
                    g: Eigenfunction::Exponential { c: vec![1.0] },
                },
                ProcessSpec::brownian(vec![0.8]).unwrap(),
                State::scalar(0.2),
            )
            .unwrap(),
        ),
    ];
    for (name, family) in [
        ("trace_gauss", TraceFamily::GaussHeat),
        ("trace_cauchy", TraceFamily::CauchySym { theta: 1.0 }),
        ("trace_nig", TraceFamily::Nig { eta: 1.0, gamma: 1.0 }),
    ] {
        out.push((
            name,
            Model::new(KernelSpec::Trace { family, lambda: 1.0, c: 3.0 }, family.driver(1), State::scalar(0.3)).unwrap(),
        ));
    }
    out
}

#[test]
fn discounted_bond_prices_are_martingales() {
    for (name, model) in models() {
        let (t, maturity) = (1.0, 3.0);
        let p0 = bond_price(&model, 0.0, maturity, &model.x0).unwrap();
        let est = derivative_price(&model, |p| p, t, maturity, 200_000, 21, Execution::default()).unwrap();
        assert!(est.z_score(p0).abs() < 4.0, "{name}: {p0} vs {est:?}");
    }
}

#[test]
fn bond_prices_are_unit_at_maturity_and_bounded_for_trace_models() {
    for (name, model) in models() {
        for x in [-1.0, 0.0, 0.4, 2.0] {
            let x = State::scalar(if matches!(model.process, ProcessSpec::Cir(_)) { x * x } else { x });
            assert_eq!(bond_price(&model, 1.5, 1.5, &x).unwrap(), 1.0, "{name}");
            if name.starts_with("trace") {
                for maturity in [1.6, 3.0, 10.0] {
                    let p = bond_price(&model, 1.5, maturity, &x).unwrap();
                    assert!(p > 0.0 && p <= 1.0, "{name}: {p}");
                }
            }
        }
    }
}

#[test]
fn swap_rate_recomputes_from_bond_prices() {
    let tenor = TenorStructure::regular(1.0, 0.5, 6).unwrap();
    for (name, model) in models() {
        let x = &model.x0;
        let s = swap_rate(&model, 0.0, x, &tenor).unwrap();
        let p = |m: f64| bond_price(&model, 0.0, m, x).unwrap();
        let annuity: f64 = tenor.payments().map(|(d, tau)| tau * p(d)).sum();
        let manual = (p(tenor.start()) - p(tenor.end())) / annuity;
        assert!((s - manual).abs() <= 1e-14 * manual.abs().max(1.0), "{name}: {s} vs {manual}");
    }
}

#[test]
fn swaption_prices_decrease_in_strike() {
    let (_, model) = models().swap_remove(1);
    let tenor = TenorStructure::regular(1.0, 1.0, 4).unwrap();
    let x = State::scalar(0.2);
    let mut prev_closed = f64::INFINITY;
    let mut prev_mc = f64::INFINITY;
    for k in 0..8 {
        let spec = SwaptionSpec::new(tenor.clone(), 0.01 * k as f64).unwrap();
        let closed = swaption_eigen_closed(&model, &spec, 0.0, &x).unwrap();
        // Common random numbers keep the Monte-Carlo estimates ordered too.
        let mc = swaption_price_mc(&model, &spec, 0.0, &x, 20_000, 3, Execution::default()).unwrap().mean;
        assert!(closed <= prev_closed && mc <= prev_mc, "K={}", spec.strike);
        prev_closed = closed;
        prev_mc = mc;
    }
    let huge = SwaptionSpec::new(tenor, 1e6).unwrap();
    let mc = swaption_price_mc(&model, &huge, 0.0, &x, 20_000, 3, Execution::default()).unwrap();
    assert_eq!(mc.mean, 0.0);
}
