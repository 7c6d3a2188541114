use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{ContextBatch, EnvKind, Environment, RewardModel};
use crate::error::{Error, Result};
use crate::seed::substream;

/// Noise standard deviation of the synthetic environments (variance 0.25).
pub const DEFAULT_NOISE_STD: f64 = 0.5;

/// `(T, d, K)` used by the cosine experiments.
pub const COSINE_DEFAULTS: (usize, usize, usize) = (2000, 10, 4);

/// `(T, d, K)` used by the quadratic experiments.
pub const QUADRATIC_DEFAULTS: (usize, usize, usize) = (2000, 4, 10);

fn check_shape(horizon: usize, dim: usize, arms: usize, noise_std: f64) -> Result<()> {
    if horizon == 0 || dim == 0 || arms == 0 {
        return Err(Error::config("T, d and K must be positive"));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::config(
            "noise standard deviation must be nonnegative",
        ));
    }
    Ok(())
}

fn build(
    kind: EnvKind,
    model: RewardModel,
    horizon: usize,
    dim: usize,
    arms: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Environment> {
    let mut ctx_rng = substream(seed, "env-contexts", 0);
    let mut noise_rng = substream(seed, "env-noise", 0);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut rounds = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let raw: Vec<Vec<f64>> = (0..arms)
            .map(|_| (0..dim).map(|_| ctx_rng.gen::<f64>()).collect())
            .collect();
        let means = raw
            .iter()
            .map(|x| model.mean(x).expect("synthetic model"))
            .collect();
        rounds.push(ContextBatch::new(
            t,
            raw,
            means,
            noise.sample(&mut noise_rng),
        )?);
    }
    Ok(Environment {
        kind,
        model,
        noise_std,
        rounds,
    })
}

/// `r = cos(3 xᵀθ*) + ξ` with contexts and `θ*` drawn from `U[0,1]^d`,
/// `θ*` normalized to unit length, and `ξ ~ N(0, noise_std²)`.
pub fn gen_cosine(
    horizon: usize,
    dim: usize,
    arms: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Environment> {
    check_shape(horizon, dim, arms, noise_std)?;
    let mut rng = substream(seed, "env-theta", 0);
    let theta: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let theta_star = super::preprocess::normalize(&theta)?;
    build(
        EnvKind::Cosine,
        RewardModel::Cosine { theta_star },
        horizon,
        dim,
        arms,
        noise_std,
        seed,
    )
}

/// `r = xᵀAᵀAx + ξ` with `A` entries drawn from `N(0, 1)` and contexts from
/// `U[0,1]^d`.
pub fn gen_quadratic(
    horizon: usize,
    dim: usize,
    arms: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Environment> {
    check_shape(horizon, dim, arms, noise_std)?;
    let mut rng = substream(seed, "env-theta", 0);
    let a: Vec<f64> = (0..dim * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    build(
        EnvKind::Quadratic,
        RewardModel::Quadratic { a, dim },
        horizon,
        dim,
        arms,
        noise_std,
        seed,
    )
}
