//! Reward environments.
//!
//! An [`Environment`] is fully materialized up front: every round's raw
//! contexts, preprocessed arm features, noiseless means and the round's noise
//! draw. Policies see only the preprocessed features; regret is computed from
//! the means.

mod classification;
pub mod preprocess;
mod synthetic;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use classification::{
    classification_env, load_classification, read_dataset, ClassificationData, DatasetKind,
    OneHotEncoder,
};
pub use synthetic::{
    gen_cosine, gen_quadratic, COSINE_DEFAULTS, DEFAULT_NOISE_STD, QUADRATIC_DEFAULTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Cosine,
    Quadratic,
    Mushroom,
    Magic,
}

impl EnvKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(EnvKind::Cosine),
            "quadratic" => Some(EnvKind::Quadratic),
            "mushroom" => Some(EnvKind::Mushroom),
            "magic" => Some(EnvKind::Magic),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::Cosine => "cosine",
            EnvKind::Quadratic => "quadratic",
            EnvKind::Mushroom => "mushroom",
            EnvKind::Magic => "magic",
        }
    }
}

/// Hidden mean function `h`.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    /// `h(x) = cos(3 xᵀθ*)` with `‖θ*‖ = 1`.
    Cosine { theta_star: Vec<f64> },
    /// `h(x) = xᵀAᵀAx`, `A` stored row-major d×d.
    Quadratic { a: Vec<f64>, dim: usize },
    /// Zero-one reward for picking the sample's label.
    Classification { n_classes: usize },
}

impl RewardModel {
    /// Noiseless mean for a raw synthetic context.
    pub fn mean(&self, raw: &[f64]) -> Option<f64> {
        match self {
            RewardModel::Cosine { theta_star } => {
                Some((3.0 * crate::covariance::dot(raw, theta_star)).cos())
            }
            RewardModel::Quadratic { a, dim } => Some(
                a.chunks_exact(*dim)
                    .map(|row| {
                        let v = crate::covariance::dot(row, raw);
                        v * v
                    })
                    .sum(),
            ),
            RewardModel::Classification { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    /// 1-based round index.
    pub t: usize,
    /// Contexts before preprocessing.
    pub raw: Vec<Vec<f64>>,
    /// Unit-norm symmetrized features seen by policies.
    pub arms: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub optimal_mean: f64,
    /// Noise added to whichever arm is pulled this round.
    pub noise: f64,
}

impl ContextBatch {
    pub(crate) fn new(t: usize, raw: Vec<Vec<f64>>, means: Vec<f64>, noise: f64) -> Result<Self> {
        let arms = raw
            .iter()
            .map(|x| preprocess::preprocess(x))
            .collect::<Result<Vec<_>>>()?;
        let optimal_mean = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            t,
            raw,
            arms,
            means,
            optimal_mean,
            noise,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub kind: EnvKind,
    pub model: RewardModel,
    pub noise_std: f64,
    pub rounds: Vec<ContextBatch>,
}

impl Environment {
    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }

    pub fn n_arms(&self) -> usize {
        self.rounds.first().map_or(0, ContextBatch::n_arms)
    }

    pub fn feature_dim(&self) -> usize {
        self.rounds.first().map_or(0, |r| r.arms[0].len())
    }

    /// Round `t` (1-based).
    pub fn round(&self, t: usize) -> &ContextBatch {
        &self.rounds[t - 1]
    }

    /// Realized reward for pulling `arm` in round `t`.
    pub fn reward(&self, t: usize, arm: usize) -> Result<f64> {
        let round = self
            .rounds
            .get(t.wrapping_sub(1))
            .ok_or_else(|| Error::input(format!("round {t} is outside the horizon")))?;
        let mean = round
            .means
            .get(arm)
            .ok_or_else(|| Error::input(format!("arm {arm} does not exist")))?;
        Ok(mean + round.noise)
    }

    /// Instantaneous pseudo-regret of pulling `arm` in round `t`.
    pub fn regret(&self, t: usize, arm: usize) -> f64 {
        let round = self.round(t);
        round.optimal_mean - round.means[arm]
    }

    /// Smallest and largest mean over all rounds and arms.
    pub fn mean_range(&self) -> (f64, f64) {
        self.rounds
            .iter()
            .flat_map(|r| r.means.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Whether some mean falls outside [0, 1].
    pub fn means_outside_unit_interval(&self) -> bool {
        let (lo, hi) = self.mean_range();
        lo < 0.0 || hi > 1.0
    }

    /// Every arm context of every round, in round-major order.
    pub fn all_features(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.rounds.iter().flat_map(|r| r.arms.iter())
    }

    /// Audit dump: `round,arm,x0..x{d-1},mean` over raw contexts.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.rounds.first().map_or(0, |r| r.raw[0].len());
        let mut out = String::from("round,arm");
        for j in 0..d {
            let _ = write!(out, ",x{j}");
        }
        out.push_str(",mean\n");
        for r in &self.rounds {
            for (a, (x, mean)) in r.raw.iter().zip(&r.means).enumerate() {
                let _ = write!(out, "{},{}", r.t, a);
                for v in x {
                    let _ = write!(out, ",{v:?}");
                }
                let _ = writeln!(out, ",{mean:?}");
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
