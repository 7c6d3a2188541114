//! Bandit policies.
//!
//! Every policy follows the same round protocol, driven by the harness:
//! [`BanditPolicy::begin_round`] (may open a batch), [`BanditPolicy::select`]
//! on the round's arm features, then [`BanditPolicy::observe`] with the
//! realized reward of the chosen arm.

mod beta;
mod bnucb;
mod linucb;
mod neural_ucb;
mod scheme;
mod uniform;

use crate::covariance::CovarianceState;
use crate::error::{Error, Result};

pub use beta::{BetaSchedule, TheoreticalBeta};
pub use bnucb::{BatchNeuralUcb, BnucbConfig};
pub use linucb::{LinUcb, LinUcbState};
pub use neural_ucb::SequentialNeuralUcb;
pub use scheme::BatchScheme;
pub use uniform::UniformRandom;

pub trait BanditPolicy: Send {
    /// Starts round `t` (1-based). Returns whether the policy was updated.
    fn begin_round(&mut self, t: usize) -> Result<bool>;

    /// Chooses an arm for the current round.
    fn select(&mut self, arms: &[Vec<f64>]) -> Result<usize>;

    /// Reports the reward of the arm chosen by the last `select`.
    fn observe(&mut self, t: usize, arm: usize, reward: f64) -> Result<()>;

    /// Number of batches opened so far; the current batch index.
    fn batch_index(&self) -> usize;

    /// Start rounds of all batches opened so far.
    fn batch_starts(&self) -> &[usize];

    fn n_policy_updates(&self) -> usize {
        self.batch_starts().len()
    }

    fn covariance(&self) -> Option<&CovarianceState> {
        None
    }
}

/// Argmax with ties broken towards the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::input("no arms to choose from"));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    if !scores[best].is_finite() {
        return Err(Error::numerical("non-finite arm score"));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[1.0, 0.3, 0.7]).unwrap(), 0);
        assert_eq!(argmax_lowest(&[0.2, 0.5, 0.5]).unwrap(), 1);
        assert_eq!(argmax_lowest(&[0.0; 4]).unwrap(), 0);
        assert!(argmax_lowest(&[]).is_err());
        assert!(argmax_lowest(&[f64::NAN]).is_err());
    }
}
