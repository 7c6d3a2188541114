//! Self-check suites: network gradients against finite differences, and the
//! covariance and NTK routines against direct recomputation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::covariance::{CovarianceState, Representation};
use crate::error::Result;
use crate::network::{NetworkConfig, NetworkParams, TrainMode};
use crate::ntk::{mc_expectations, ntk_levels, relu_expectations};
use crate::seed::substream;

/// Relative gradient error tolerated by [`grad_check_suite`].
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub metric: f64,
    pub tolerance: f64,
}

fn report(name: &str, metric: f64, tolerance: f64) -> CheckReport {
    CheckReport {
        name: name.to_string(),
        passed: metric <= tolerance,
        metric,
        tolerance,
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Finite-difference derivative of `f` along coordinate `k`.
///
/// Central differences are exact for a function linear on `[θ−h, θ+h]`. When
/// the two one-sided slopes disagree a ReLU kink lies inside the stencil; the
/// step is shrunk, and if the kink persists the one-sided slope closer to
/// `analytic` is returned, since the analytic gradient is one of them.
pub fn finite_difference(net: &NetworkParams, x: &[f64], k: usize, analytic: f64) -> Result<f64> {
    let mut theta = net.flat().to_vec();
    let base = theta[k];
    let mut probe = net.clone();
    let mut eval = |v: f64| -> Result<f64> {
        theta[k] = v;
        probe.set_flat(theta.clone())?;
        probe.forward(x)
    };
    let f0 = eval(base)?;
    let mut h = FD_STEP;
    let mut slopes = (0.0, 0.0);
    for _ in 0..4 {
        let fp = eval(base + h)?;
        let fm = eval(base - h)?;
        let (up, down) = ((fp - f0) / h, (f0 - fm) / h);
        if relative_error(up, down) < 1e-6 {
            return Ok((fp - fm) / (2.0 * h));
        }
        slopes = (up, down);
        h /= 100.0;
    }
    Ok(
        if (slopes.0 - analytic).abs() < (slopes.1 - analytic).abs() {
            slopes.0
        } else {
            slopes.1
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub n_nets: usize,
    pub n_coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares every gradient coordinate of `n_nets` random networks
/// (`d ≤ 10`, `m ≤ 16`, `L ∈ {2, 3}`, generic weights) against finite differences.
pub fn grad_check_suite(n_nets: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = substream(seed, "grad-check", 0);
    let mut max_err: f64 = 0.0;
    let mut n_coords = 0;
    for i in 0..n_nets {
        let cfg = NetworkConfig {
            input_dim: 2 * rng.gen_range(1..=5),
            width: 2 * rng.gen_range(1..=8),
            depth: rng.gen_range(2..=3),
            step_size: 0.01,
            gd_steps: 0,
            reg: 0.01,
            train_mode: TrainMode::FullGradient,
            warm_start: false,
        };
        let mut net = NetworkParams::init_symmetric(&cfg, seed.wrapping_add(i as u64))?;
        let scale = (1.0 / cfg.width as f64).sqrt();
        let theta: Vec<f64> = (0..net.num_params())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        net.set_flat(theta)?;
        let x: Vec<f64> = (0..cfg.input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let (_, grad) = net.value_and_grad(&x)?;
        for (k, &g) in grad.iter().enumerate() {
            let fd = finite_difference(&net, &x, k, g)?;
            max_err = max_err.max(relative_error(g, fd));
        }
        n_coords += grad.len();
    }
    Ok(GradCheckReport {
        n_nets,
        n_coordinates: n_coords,
        max_rel_error: max_err,
        passed: max_err <= GRAD_REL_TOL,
    })
}

fn unit_vector(rng: &mut impl Rng, p: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

/// Maintained inverse and log-determinant after `n_updates` random rank-one
/// updates at dimension `p`, against dense recomputation.
pub fn covariance_check(p: usize, n_updates: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = substream(seed, "covariance-check", 0);
    let lambda = 1.0;
    let mut cov = CovarianceState::with_representation(p, lambda, Representation::Dense)?;
    let mut z = DMatrix::<f64>::identity(p, p) * lambda;
    for _ in 0..n_updates {
        let phi = DMatrix::from_column_slice(p, 1, &unit_vector(&mut rng, p));
        cov.rank_one_update(phi.as_slice())?;
        z += &phi * phi.transpose();
    }
    let chol = z.clone().cholesky().expect("Z is positive definite");
    let dense_inv = chol.inverse();
    let dense_logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let inv_err = (cov.z_inv_dense() - dense_inv).amax();
    Ok((inv_err, (cov.logdet() - dense_logdet).abs()))
}

/// Grid of `(ρ, a, b)` used by the NTK Monte Carlo oracle.
pub fn ntk_mc_grid() -> Vec<(f64, f64, f64)> {
    let mut grid = Vec::new();
    for &rho in &[-1.0, -0.7, -0.3, 0.0, 0.4, 0.8, 1.0] {
        for &(a, b) in &[(1.0, 1.0), (0.5, 2.0), (3.0, 1.5)] {
            grid.push((rho, a, b));
        }
    }
    grid
}

/// Largest deviation between closed-form and Monte Carlo kernel
/// expectations over [`ntk_mc_grid`], in standard errors.
pub fn ntk_mc_check(n_samples: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, (rho, a, b)) in ntk_mc_grid().into_iter().enumerate() {
        let c = rho * (a * b).sqrt();
        let (val, der) = relu_expectations(a, b, c);
        let mc = mc_expectations([[a, c], [c, b]], n_samples, seed.wrapping_add(i as u64))?;
        for (exact, est, se) in [(val, mc.e_val, mc.e_val_se), (der, mc.e_der, mc.e_der_se)] {
            let z = if se > 0.0 {
                (est - exact).abs() / se
            } else if (est - exact).abs() < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
    }
    Ok(worst)
}

/// Largest `|Σˡ_ii − 1|` over all levels for random unit contexts.
pub fn ntk_diagonal_check(n: usize, dim: usize, depth: usize, seed: u64) -> Result<f64> {
    let mut rng = substream(seed, "ntk-diag-check", 0);
    let contexts: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, dim)).collect();
    let levels = ntk_levels(&contexts, depth)?;
    Ok(levels
        .iter()
        .flat_map(|(sigma, _)| {
            sigma
                .diagonal()
                .iter()
                .map(|v| (v - 1.0).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max))
}

/// Sherman–Morrison inverse, log-determinant and NTK Monte Carlo checks.
pub fn oracle_check_suite(mc_samples: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let (inv_err, logdet_err) = covariance_check(100, 1000, seed)?;
    Ok(vec![
        report("sherman_morrison_inverse_max_abs", inv_err, 1e-6),
        report("logdet_abs", logdet_err, 1e-6),
        report(
            "ntk_mc_max_standard_errors",
            ntk_mc_check(mc_samples, seed)?,
            3.0,
        ),
        report(
            "ntk_sigma_diagonal_max_abs",
            ntk_diagonal_check(20, 8, 4, seed)?,
            1e-10,
        ),
    ])
}
