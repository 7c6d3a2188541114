//! Neural tangent kernel of the ReLU network and the effective dimension.
//!
//! For unit contexts the gram matrix is built layer by layer:
//!
//! ```text
//! Σ¹ᵢⱼ = H̃¹ᵢⱼ = ⟨xᵢ, xⱼ⟩
//! Aˡᵢⱼ = [[Σˡᵢᵢ, Σˡᵢⱼ], [Σˡᵢⱼ, Σˡⱼⱼ]]
//! Σˡ⁺¹ᵢⱼ = 2 E[σ(u)σ(v)],            (u, v) ~ N(0, Aˡᵢⱼ)
//! H̃ˡ⁺¹ᵢⱼ = 2 H̃ˡᵢⱼ E[σ'(u)σ'(v)] + Σˡ⁺¹ᵢⱼ
//! H = (H̃ᴸ + Σᴸ) / 2
//! ```
//!
//! A depth-L network performs L − 1 recursion steps, so L = 2 applies the
//! recursion once. Both expectations have arc-cosine closed forms; see
//! [`relu_expectations`]. [`mc_expectations`] estimates the same quantities
//! by sampling and is used to cross-check them.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::substream;

/// Tolerance on ‖x‖ − 1 for contexts passed to [`ntk_gram`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Smallest eigenvalue tolerated before the gram matrix is deemed non-PSD.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct NtkMatrix {
    pub h: DMatrix<f64>,
    pub sigma_last: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
}

impl NtkMatrix {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveDimension {
    pub d_tilde: f64,
    pub lambda: f64,
    pub n_contexts: usize,
}

/// `(2E[σ(u)σ(v)], 2E[σ'(u)σ'(v)])` for `(u, v) ~ N(0, [[a, c], [c, b]])`.
///
/// With `ρ = c/√(ab)` clamped to `[−1, 1]`:
/// `2E[σ(u)σ(v)] = √(ab)(√(1−ρ²) + ρ(π − arccos ρ))/π` and
/// `2E[σ'(u)σ'(v)] = (π − arccos ρ)/π`.
pub fn relu_expectations(a: f64, b: f64, c: f64) -> (f64, f64) {
    let scale = (a * b).sqrt();
    if scale == 0.0 {
        return (0.0, 0.0);
    }
    let rho = c / scale;
    if rho >= 1.0 {
        return (scale, 1.0);
    }
    if rho <= -1.0 {
        return (0.0, 0.0);
    }
    let angle = std::f64::consts::PI - rho.acos();
    let value = scale * ((1.0 - rho * rho).sqrt() + rho * angle) / std::f64::consts::PI;
    (value, angle / std::f64::consts::PI)
}

/// Monte Carlo estimate with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub e_val: f64,
    pub e_val_se: f64,
    pub e_der: f64,
    pub e_der_se: f64,
}

/// Samples `2σ(u)σ(v)` and `2σ'(u)σ'(v)` for `(u, v) ~ N(0, A)`.
pub fn mc_expectations(a: [[f64; 2]; 2], n_samples: usize, seed: u64) -> Result<McEstimate> {
    let (va, vb, c) = (a[0][0], a[1][1], a[0][1]);
    if (a[0][1] - a[1][0]).abs() > 1e-12 || va < 0.0 || vb < 0.0 || c * c > va * vb * (1.0 + 1e-12)
    {
        return Err(Error::input(
            "covariance for the Monte Carlo oracle must be symmetric PSD",
        ));
    }
    if n_samples < 2 {
        return Err(Error::input("need at least two Monte Carlo samples"));
    }
    // u = √a z₁, v = (c/√a) z₁ + √(b − c²/a) z₂.
    let sa = va.sqrt();
    let (k1, k2) = if sa > 0.0 {
        (c / sa, (vb - c * c / va).max(0.0).sqrt())
    } else {
        (0.0, vb.sqrt())
    };
    let mut rng = substream(seed, "ntk-mc", 0);
    let (mut s_val, mut s_val2, mut s_der) = (0.0, 0.0, 0.0);
    for _ in 0..n_samples {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let u = sa * z1;
        let v = k1 * z1 + k2 * z2;
        let val = 2.0 * u.max(0.0) * v.max(0.0);
        s_val += val;
        s_val2 += val * val;
        if u > 0.0 && v > 0.0 {
            s_der += 2.0;
        }
    }
    let n = n_samples as f64;
    let mean_val = s_val / n;
    let var_val = (s_val2 / n - mean_val * mean_val).max(0.0) * n / (n - 1.0);
    let mean_der = s_der / n;
    // Each draw is 0 or 2.
    let p = mean_der / 2.0;
    let var_der = 4.0 * p * (1.0 - p) * n / (n - 1.0);
    Ok(McEstimate {
        e_val: mean_val,
        e_val_se: (var_val / n).sqrt(),
        e_der: mean_der,
        e_der_se: (var_der / n).sqrt(),
    })
}

/// Layer-wise `Σˡ` and `H̃ˡ` for l = 1..=depth.
pub fn ntk_levels(
    contexts: &[Vec<f64>],
    depth: usize,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    if depth < 2 {
        return Err(Error::config(format!(
            "depth must be at least 2, got {depth}"
        )));
    }
    if contexts.is_empty() {
        return Err(Error::input("need at least one context"));
    }
    let dim = contexts[0].len();
    for (i, x) in contexts.iter().enumerate() {
        if x.len() != dim {
            return Err(Error::input(format!(
                "context {i} has a different dimension"
            )));
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::input(format!(
                "context {i} has norm {norm}; normalize and symmetrize contexts first"
            )));
        }
    }
    let n = contexts.len();
    let mut sigma = DMatrix::from_fn(n, n, |i, j| {
        crate::covariance::dot(&contexts[i], &contexts[j])
    });
    let mut h_tilde = sigma.clone();
    let mut levels = vec![(sigma.clone(), h_tilde.clone())];
    for _ in 1..depth {
        // Each row is independent, so the parallel fill is deterministic.
        let rows: Vec<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| relu_expectations(sigma[(i, i)], sigma[(j, j)], sigma[(i, j)]))
                    .collect()
            })
            .collect();
        let next_sigma = DMatrix::from_fn(n, n, |i, j| rows[i][j].0);
        let next_h = DMatrix::from_fn(n, n, |i, j| {
            h_tilde[(i, j)] * rows[i][j].1 + next_sigma[(i, j)]
        });
        sigma = next_sigma;
        h_tilde = next_h;
        levels.push((sigma.clone(), h_tilde.clone()));
    }
    Ok(levels)
}

/// NTK gram matrix on unit-norm contexts for a depth-`depth` network.
pub fn ntk_gram(contexts: &[Vec<f64>], depth: usize) -> Result<NtkMatrix> {
    let levels = ntk_levels(contexts, depth)?;
    let (sigma, h_tilde) = levels.into_iter().last().expect("depth >= 2");
    let mut h = (&h_tilde + &sigma) * 0.5;
    // Symmetrize exactly against rounding in the recursion.
    let n = h.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let min_eig = eigenvalues[0];
    Ok(NtkMatrix {
        h,
        sigma_last: sigma,
        eigenvalues,
        min_eig,
    })
}

/// `d̃ = log det(I + H/λ) / log(1 + n/λ)` with n the number of contexts in `ntk`.
pub fn effective_dimension(ntk: &NtkMatrix, lambda: f64) -> Result<EffectiveDimension> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::config(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let scale = ntk
        .eigenvalues
        .last()
        .copied()
        .unwrap_or(1.0)
        .abs()
        .max(1.0);
    if ntk.min_eig < -PSD_TOL * scale {
        return Err(Error::numerical(format!(
            "NTK gram matrix is not PSD (min eigenvalue {})",
            ntk.min_eig
        )));
    }
    let n = ntk.n();
    let m = DMatrix::<f64>::identity(n, n) + &ntk.h / lambda;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::numerical("I + H/λ is not positive definite"))?;
    let logdet: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    Ok(EffectiveDimension {
        d_tilde: logdet / (n as f64 / lambda).ln_1p(),
        lambda,
        n_contexts: n,
    })
}

/// Whether `H ⪰ λ₀I` holds for some `λ₀ > 0`, with the smallest eigenvalue.
pub fn check_assumption1(ntk: &NtkMatrix) -> (bool, f64) {
    (ntk.min_eig > PSD_TOL, ntk.min_eig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn closed_forms_at_known_correlations() {
        let (v, d) = relu_expectations(1.0, 1.0, 0.0);
        assert_abs_diff_eq!(v, 1.0 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-15);
        let (v, d) = relu_expectations(2.5, 2.5, 2.5);
        assert_abs_diff_eq!(v, 2.5, epsilon = 1e-15);
        assert_eq!(d, 1.0);
        let (_, d) = relu_expectations(1.0, 1.0, 0.5);
        assert_abs_diff_eq!(d, 2.0 / 3.0, epsilon = 1e-15);
        // Drift past ±1 lands on the exact limits.
        assert_eq!(relu_expectations(1.0, 1.0, 1.0 + 1e-15), (1.0, 1.0));
        assert_eq!(relu_expectations(1.0, 1.0, -1.0 - 1e-15), (0.0, 0.0));
    }

    #[test]
    fn first_level_is_inner_product() {
        let x = vec![0.6, 0.8];
        let levels = ntk_levels(&[x.clone(), x], 2).unwrap();
        assert_abs_diff_eq!(levels[0].0[(0, 1)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_unit_contexts() {
        let err = ntk_gram(&[vec![1.0, 1.0]], 2);
        assert!(matches!(err, Err(Error::Input(_))));
        assert!(ntk_gram(&[vec![1.0, 0.0]], 1).is_err());
    }

    #[test]
    fn parallel_contexts_violate_assumption() {
        let x = vec![0.6, 0.8];
        let ntk = ntk_gram(&[x.clone(), x], 2).unwrap();
        let (ok, min_eig) = check_assumption1(&ntk);
        assert!(!ok);
        assert!(min_eig <= 1e-8);
    }

    #[test]
    fn single_context() {
        let ntk = ntk_gram(&[vec![1.0, 0.0, 0.0]], 3).unwrap();
        let (ok, min_eig) = check_assumption1(&ntk);
        assert!(ok);
        assert_abs_diff_eq!(min_eig, ntk.h[(0, 0)], epsilon = 1e-15);
        let lambda = 0.5;
        let ed = effective_dimension(&ntk, lambda).unwrap();
        let h = ntk.h[(0, 0)];
        assert_abs_diff_eq!(
            ed.d_tilde,
            (h / lambda).ln_1p() / (1.0 / lambda).ln_1p(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn scaled_identity_gram() {
        let n = 4;
        let c = 1.7;
        let h = DMatrix::from_diagonal_element(n, n, c);
        let ntk = NtkMatrix {
            sigma_last: h.clone(),
            h,
            eigenvalues: vec![c; n],
            min_eig: c,
        };
        let ed = effective_dimension(&ntk, 0.1).unwrap();
        let expected = n as f64 * (c / 0.1).ln_1p() / (n as f64 / 0.1).ln_1p();
        assert_abs_diff_eq!(ed.d_tilde, expected, epsilon = 1e-12);
        assert!(effective_dimension(&ntk, 0.0).is_err());
    }

    #[test]
    fn mc_oracle_rejects_non_psd() {
        assert!(mc_expectations([[1.0, 2.0], [2.0, 1.0]], 100, 0).is_err());
        assert!(mc_expectations([[1.0, 0.1], [0.2, 1.0]], 100, 0).is_err());
    }
}
