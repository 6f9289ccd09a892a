use hka::calib::{fit, CalibrationFamily, CalibrationProblem};
use hka::cli::default_init;
use hka::pricing::{initial_curve, DiscountCurve};

#[test]
fn every_family_recovers_its_own_curve_from_a_perturbed_start() {
    let maturities: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
    for family in CalibrationFamily::ALL {
        let truth = default_init(family);
        let model = family.build(&truth).unwrap();
        let target = DiscountCurve::new(maturities.clone(), initial_curve(&model, &maturities).unwrap()).unwrap();
        let problem = CalibrationProblem::new(family, target).unwrap();
        for (k, scale) in [1.2, 0.8].into_iter().enumerate() {
            // Alternate the direction per coordinate; keep x0 = 0 states inside their bounds.
            let init: Vec<f64> = truth
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let s = if (i + k) % 2 == 0 { scale } else { 2.0 - scale };
                    if *v == 0.0 { 0.1 } else { v * s }
                })
                .collect();
            let init_loss = problem.loss(&init);
            let result = fit(&problem, &init, 3000, 1e-6).unwrap();
            let recovered = result.params.iter().zip(&truth).all(|(p, t)| (p - t).abs() <= 1e-3 * t.abs().max(1e-3));
            assert!(
                recovered || result.residual_norm <= 1e-6,
                "{family} from {init:?}: {:?} residual {:e}",
                result.params,
                result.residual_norm
            );
            assert!(result.residual_norm.powi(2) <= init_loss, "{family}: loss increased");
        }
    }
}
