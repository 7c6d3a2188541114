use bnucb::ntk::{effective_dimension, ntk_gram, ntk_levels, relu_expectations};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn unit_contexts(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    raw.iter()
        .map(|v| {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter().map(|a| a / n).collect()
        })
        .collect()
}

fn context_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..6)
        .prop_flat_map(|d| prop::collection::vec(prop::collection::vec(0.05f64..1.0, d), 2..12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gram_is_symmetric_psd_with_unit_diagonals(raw in context_strategy(), depth in 2usize..5) {
        let xs = unit_contexts(&raw);
        let ntk = ntk_gram(&xs, depth).unwrap();
        let n = xs.len();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((ntk.h[(i, j)] - ntk.h[(j, i)]).abs() < 1e-12);
            }
        }
        prop_assert!(ntk.min_eig > -1e-9);
        for (sigma, _) in ntk_levels(&xs, depth).unwrap() {
            for i in 0..n {
                prop_assert!((sigma[(i, i)] - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn effective_dimension_matches_eigenvalues(raw in context_strategy(), lambda in 0.01f64..5.0) {
        let xs = unit_contexts(&raw);
        let ntk = ntk_gram(&xs, 2).unwrap();
        let d = effective_dimension(&ntk, lambda).unwrap();
        let eig = ntk.h.clone().symmetric_eigen().eigenvalues;
        let oracle: f64 = eig.iter().map(|l| (l.max(0.0) / lambda).ln_1p()).sum::<f64>()
            / (xs.len() as f64 / lambda).ln_1p();
        prop_assert!((d.d_tilde - oracle).abs() < 1e-8);
        prop_assert!(d.d_tilde > 0.0);
    }

    #[test]
    fn kernel_expectations_are_bounded(a in 0.01f64..4.0, b in 0.01f64..4.0, rho in -1.0f64..1.0) {
        let c = rho * (a * b).sqrt();
        let (val, der) = relu_expectations(a, b, c);
        // Cauchy–Schwarz against the diagonal value √(ab).
        prop_assert!(val >= -1e-15 && val <= (a * b).sqrt() + 1e-12);
        prop_assert!((0.0..=1.0).contains(&der));
    }
}

#[test]
fn diagonal_kernel_of_unit_context() {
    // ρ = 1, a = b = 1: 2E[σ(u)²] = 1 and 2E[σ'(u)²] = 1.
    let (v, d) = relu_expectations(1.0, 1.0, 1.0);
    assert!((v - 1.0).abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
}

#[test]
fn identical_contexts_make_a_rank_one_gram() {
    let x = unit_contexts(&[vec![0.3, 0.4, 0.5]])[0].clone();
    let ntk = ntk_gram(&[x.clone(), x.clone(), x], 3).unwrap();
    let ones = DMatrix::from_element(3, 3, ntk.h[(0, 0)]);
    assert!((ntk.h.clone() - ones).amax() < 1e-12);
    assert!(ntk.min_eig.abs() < 1e-9);
}
