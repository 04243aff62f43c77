use pillar::pipeline::{compute_zeta, compute_zeta_shift, evaluate, fit_basis, pillar_fit, PillarParams};
use pillar::synth::{sample_gmm, sample_gmm_with, GmmSpec, Normalization};
use pillar::{Error, PrivacyBudget, PrivacyMode, Rng};
use proptest::prelude::*;

fn gmm(d: usize, n: usize, seed: u64) -> pillar::LabeledDataset {
    sample_gmm(&GmmSpec::scaled(d, 5.0).unwrap(), n, &mut Rng::new(seed)).unwrap().data
}

#[test]
fn non_private_fit_separates_easy_mixture() {
    let train = gmm(20, 1000, 1);
    let public = gmm(20, 500, 2).unlabeled();
    let test = gmm(20, 500, 3);
    let params = PillarParams::new(2, 0.5, 0.0, PrivacyBudget::non_private());
    let (model, report) = pillar_fit(&train, &public, &params, &mut Rng::new(4)).unwrap();
    assert!(pillar::linalg::norm(model.weights()) <= 1.0 + 1e-12);
    assert_eq!(report.k, 2);
    assert!(evaluate(&model, &test).unwrap() < 0.05);
}

#[test]
fn private_fit_is_seeded() {
    let train = gmm(10, 400, 5);
    let public = gmm(10, 200, 6).unlabeled();
    let budget = PrivacyBudget::new(1.0, 1e-5, PrivacyMode::RdpDpsgd).unwrap();
    let params = PillarParams::new(3, 0.5, 0.0, budget);
    let a = pillar_fit(&train, &public, &params, &mut Rng::new(8)).unwrap().0;
    let b = pillar_fit(&train, &public, &params, &mut Rng::new(8)).unwrap().0;
    assert_eq!(a.weights(), b.weights());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let params = PillarParams::new(2, 0.5, 0.0, PrivacyBudget::non_private());
    let err = pillar_fit(&gmm(5, 20, 1), &gmm(6, 20, 2).unlabeled(), &params, &mut Rng::new(0));
    assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    assert!(matches!(fit_basis(&gmm(5, 20, 1).unlabeled(), 6), Err(Error::BadK { .. })));
}

#[test]
fn zeta_validation() {
    assert!(compute_zeta(0.0, 0.0).is_err());
    assert!(compute_zeta(0.5, 0.96).is_err());
    assert!(compute_zeta_shift(0.5, 0.0, 0.1, 1.0).is_err());
    assert!(compute_zeta_shift(0.5, 0.0, 0.01, 0.0).is_err());
}

#[test]
fn normalizations_respect_the_unit_ball() {
    let spec = GmmSpec::scaled(4, 3.0).unwrap();
    for mode in [Normalization::MaxNorm, Normalization::UnitSphere, Normalization::FixedRadius(2.0)] {
        let s = sample_gmm_with(&spec, 300, mode, &mut Rng::new(11)).unwrap();
        for (x, _) in s.data.iter() {
            let n = pillar::linalg::norm(x);
            assert!(n <= 1.0 + 1e-12);
            if mode == Normalization::UnitSphere {
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
    assert!(sample_gmm_with(&spec, 3, Normalization::FixedRadius(0.0), &mut Rng::new(1)).is_err());
}

proptest! {
    #[test]
    fn zeta_shift_never_exceeds_zeta(gamma0 in 0.01f64..0.99, xi0 in 0.0f64..0.4, eta in 0.0f64..0.05) {
        let delta_k = 1.0;
        let base = compute_zeta(gamma0, xi0).unwrap();
        if let Ok(shifted) = compute_zeta_shift(gamma0, xi0, eta, delta_k) {
            prop_assert!(shifted <= base);
            prop_assert!(shifted > 0.0);
        }
    }

    #[test]
    fn sampling_is_reproducible(d in 2usize..8, n in 1usize..50, seed in any::<u64>()) {
        let spec = GmmSpec::scaled(d, 2.0).unwrap();
        let a = sample_gmm(&spec, n, &mut Rng::new(seed)).unwrap();
        let b = sample_gmm(&spec, n, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a.raw_flat(), b.raw_flat());
        prop_assert_eq!(a.data.labels(), b.data.labels());
    }
}
