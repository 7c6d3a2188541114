use approx::assert_abs_diff_eq;
use bnucb::covariance::{CovarianceState, Representation, REFRESH_INTERVAL};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> Vec<f64> {
    (0..p)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn dense_logdet(z: &DMatrix<f64>) -> f64 {
    let chol = z.clone().cholesky().unwrap();
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v.ln())
        .sum::<f64>()
}

#[test]
fn no_drift_over_ten_thousand_updates() {
    let p = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cov = CovarianceState::with_representation(p, 0.1, Representation::Dense).unwrap();
    let mut z = DMatrix::<f64>::identity(p, p) * 0.1;
    for _ in 0..10_000 {
        let phi = gaussian(&mut rng, p, 0.3);
        cov.rank_one_update(&phi).unwrap();
        let v = DVector::from_column_slice(&phi);
        z += &v * v.transpose();
    }
    assert_eq!(cov.update_count(), 10_000);
    const { assert!(10_000 > 5 * REFRESH_INTERVAL) };
    let inv = z.clone().cholesky().unwrap().inverse();
    assert!((cov.z_inv_dense() - inv).amax() < 1e-8);
    assert_abs_diff_eq!(cov.logdet(), dense_logdet(&z), epsilon = 1e-8);
}

#[test]
fn elliptical_potential_on_unit_streams() {
    // Σ min{1, ‖φ_t‖²_{Z_t⁻¹}} ≤ 2 log(det Z_{T+1} / det λI).
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let mut cov = CovarianceState::new(8, 1.0).unwrap();
        let mut lhs = 0.0;
        for _ in 0..200 {
            let phi = gaussian(&mut rng, 8, 0.5);
            lhs += cov.mahalanobis(&phi).unwrap().powi(2).min(1.0);
            cov.rank_one_update(&phi).unwrap();
        }
        assert!(lhs <= 2.0 * cov.logdet_gain() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logdet_is_monotone(seed in any::<u64>(), p in 1usize..12, n in 1usize..40, lambda in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cov = CovarianceState::new(p, lambda).unwrap();
        let mut prev = cov.logdet();
        for _ in 0..n {
            let phi = gaussian(&mut rng, p, 1.0);
            let gain = cov.rank_one_update(&phi).unwrap();
            prop_assert!(gain >= 0.0);
            prop_assert!(cov.logdet() >= prev);
            prev = cov.logdet();
        }
    }

    #[test]
    fn determinant_lemma_gain(seed in any::<u64>(), p in 1usize..10, lambda in 0.05f64..2.0) {
        // log det(Z + φφᵀ) − log det Z = log(1 + φᵀZ⁻¹φ).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cov = CovarianceState::new(p, lambda).unwrap();
        for _ in 0..5 {
            cov.rank_one_update(&gaussian(&mut rng, p, 1.0)).unwrap();
        }
        let phi = gaussian(&mut rng, p, 1.0);
        let q = cov.mahalanobis(&phi).unwrap().powi(2);
        let gain = cov.rank_one_update(&phi).unwrap();
        prop_assert!((gain - q.ln_1p()).abs() < 1e-10);
    }

    #[test]
    fn elliptical_potential_random_streams(seed in any::<u64>(), scale in 0.1f64..3.0, lambda in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cov = CovarianceState::new(6, lambda).unwrap();
        let mut lhs = 0.0;
        for _ in 0..60 {
            let phi = gaussian(&mut rng, 6, scale);
            lhs += cov.mahalanobis(&phi).unwrap().powi(2).min(1.0);
            cov.rank_one_update(&phi).unwrap();
        }
        prop_assert!(lhs <= 2.0 * cov.logdet_gain() + 1e-10);
    }

    #[test]
    fn determinant_ratio_bounds_stale_norms(seed in any::<u64>(), early in 0usize..10, extra in 0usize..20) {
        // Z_late ⪰ Z_early ⇒ ‖φ‖²_{Z_early⁻¹} ≤ (det Z_late / det Z_early) ‖φ‖²_{Z_late⁻¹}.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cov = CovarianceState::new(5, 0.5).unwrap();
        for _ in 0..early {
            cov.rank_one_update(&gaussian(&mut rng, 5, 1.0)).unwrap();
        }
        let frozen = cov.freeze_inverse();
        let logdet_early = cov.logdet();
        for _ in 0..extra {
            cov.rank_one_update(&gaussian(&mut rng, 5, 1.0)).unwrap();
        }
        let phi = gaussian(&mut rng, 5, 1.0);
        let lhs = cov.mahalanobis_frozen(&frozen, &phi).unwrap().powi(2);
        let rhs = (cov.logdet() - logdet_early).exp() * cov.mahalanobis(&phi).unwrap().powi(2);
        prop_assert!(lhs <= rhs + 1e-10 * rhs.max(1.0));
    }

    #[test]
    fn dual_and_dense_layouts_agree(seed in any::<u64>(), p in 2usize..30, n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = CovarianceState::with_representation(p, 0.3, Representation::Dense).unwrap();
        let mut dual = CovarianceState::with_representation(p, 0.3, Representation::Dual).unwrap();
        for _ in 0..n {
            let phi = gaussian(&mut rng, p, 1.0);
            dense.rank_one_update(&phi).unwrap();
            dual.rank_one_update(&phi).unwrap();
        }
        let probe = gaussian(&mut rng, p, 1.0);
        let (a, b) = (dense.mahalanobis(&probe).unwrap(), dual.mahalanobis(&probe).unwrap());
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1.0));
        prop_assert!((dense.logdet() - dual.logdet()).abs() < 1e-8);
    }
}
