use pillar::mechanisms::{
    calibrate_base_noise, calibrate_dpsgd_sigma, exponential_select, gaussian_perturb, rdp_epsilon,
    selection_probabilities, FormulaVariant,
};
use pillar::{Error, Rng};
use proptest::prelude::*;

#[test]
fn equal_utilities_select_uniformly() {
    let p = selection_probabilities(&[0.3; 4], 1.0, 0.5).unwrap();
    for v in p {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn select_rejects_mismatched_inputs() {
    let mut rng = Rng::new(1);
    assert!(matches!(
        exponential_select::<u8>(&[], &[], 1.0, 1.0, &mut rng),
        Err(Error::EmptyCandidates)
    ));
    assert!(matches!(
        exponential_select(&[1, 2], &[0.0], 1.0, 1.0, &mut rng),
        Err(Error::EmptyCandidates)
    ));
}

#[test]
fn select_is_reproducible() {
    let utilities = [0.1, 0.5, 0.2];
    let picks = |seed| {
        let mut rng = Rng::new(seed);
        (0..50)
            .map(|_| exponential_select(&["a", "b", "c"], &utilities, 2.0, 0.1, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(picks(9), picks(9));
}

#[test]
fn variants_coincide_at_unit_epsilon() {
    let a = calibrate_base_noise(2.0, 100, 1.0, 1e-5, FormulaVariant::PaperLiteral).unwrap();
    let b = calibrate_base_noise(2.0, 100, 1.0, 1e-5, FormulaVariant::BassilyOriginal).unwrap();
    assert_eq!(a.sigma_squared, b.sigma_squared);
    let a = calibrate_base_noise(2.0, 100, 0.5, 1e-5, FormulaVariant::PaperLiteral).unwrap();
    let b = calibrate_base_noise(2.0, 100, 0.5, 1e-5, FormulaVariant::BassilyOriginal).unwrap();
    assert!(b.sigma_squared > a.sigma_squared);
}

#[test]
fn calibration_rejects_bad_budgets() {
    for (eps, delta, n) in [(0.0, 1e-5, 10), (f64::INFINITY, 1e-5, 10), (1.0, 1.0, 10), (1.0, 1e-5, 0)] {
        assert!(calibrate_base_noise(1.0, n, eps, delta, FormulaVariant::PaperLiteral).is_err());
    }
}

#[test]
fn zero_variance_perturbation_is_identity() {
    let v = vec![0.25, -1.0, 3.5];
    assert_eq!(gaussian_perturb(&v, 0.0, &mut Rng::new(3)), v);
}

#[test]
fn calibrated_sigma_meets_target() {
    for &(eps, steps, q) in &[(0.1, 3000u64, 0.064), (1.0, 1000, 0.01), (8.0, 500, 0.1)] {
        let sigma = calibrate_dpsgd_sigma(eps, 1e-5, steps, q).unwrap();
        assert!(rdp_epsilon(sigma, steps, q, 1e-5).unwrap() <= eps);
        assert!(rdp_epsilon(sigma * 0.99, steps, q, 1e-5).unwrap() > eps);
    }
}

proptest! {
    #[test]
    fn probabilities_normalized_and_monotone(
        utilities in prop::collection::vec(-5.0f64..5.0, 1..8),
        eps in 0.01f64..10.0,
        sens in 0.01f64..2.0,
    ) {
        let p = selection_probabilities(&utilities, eps, sens).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if utilities[i] > utilities[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn epsilon_decreases_with_noise(sigma in 0.5f64..20.0, steps in 1u64..2000, q in 0.001f64..0.5) {
        let lo = rdp_epsilon(sigma, steps, q, 1e-5).unwrap();
        let hi = rdp_epsilon(sigma * 1.5, steps, q, 1e-5).unwrap();
        prop_assert!(hi <= lo);
    }
}
