use super::bnucb::training_seed;
use super::{argmax_lowest, BanditPolicy, BetaSchedule};
use crate::covariance::CovarianceState;
use crate::error::{Error, Result};
use crate::network::{train_nn, GradientFeature, NetworkConfig, NetworkParams};

/// Fully sequential NeuralUCB: retrains and rescores every round against the
/// live covariance, with each reward visible from the next round on.
#[derive(Debug, Clone)]
pub struct SequentialNeuralUcb {
    net: NetworkConfig,
    beta: BetaSchedule,
    theta: NetworkParams,
    cov: CovarianceState,
    beta_t: f64,
    history_x: Vec<Vec<f64>>,
    history_r: Vec<f64>,
    last_choice: Option<(Vec<f64>, GradientFeature)>,
    round_starts: Vec<usize>,
    seed: u64,
}

impl SequentialNeuralUcb {
    pub fn new(
        net: NetworkConfig,
        beta: BetaSchedule,
        init: NetworkParams,
        seed: u64,
    ) -> Result<Self> {
        net.validate()?;
        beta.validate(net.width, net.reg)?;
        if init.input_dim() != net.input_dim
            || init.width() != net.width
            || init.depth() != net.depth
        {
            return Err(Error::config(
                "initial parameters do not match the network config",
            ));
        }
        Ok(Self {
            cov: CovarianceState::new(init.num_params(), net.reg)?,
            theta: init.at_init(),
            net,
            beta,
            beta_t: 0.0,
            history_x: Vec::new(),
            history_r: Vec::new(),
            last_choice: None,
            round_starts: Vec::new(),
            seed,
        })
    }

    pub fn current_params(&self) -> &NetworkParams {
        &self.theta
    }

    pub fn beta_t(&self) -> f64 {
        self.beta_t
    }
}

impl BanditPolicy for SequentialNeuralUcb {
    fn begin_round(&mut self, t: usize) -> Result<bool> {
        self.theta = train_nn(
            &self.net,
            &self.theta,
            &self.history_x,
            &self.history_r,
            training_seed(self.seed, t),
        )?;
        self.beta_t = self.beta.evaluate(&self.cov, t, self.net.width)?;
        self.round_starts.push(t);
        Ok(true)
    }

    fn select(&mut self, arms: &[Vec<f64>]) -> Result<usize> {
        if self.round_starts.is_empty() {
            return Err(Error::input("select called before the first round"));
        }
        let mut scores = Vec::with_capacity(arms.len());
        let mut feats = Vec::with_capacity(arms.len());
        for x in arms {
            let (f, phi) = self.theta.value_and_features(x)?;
            let bonus = if self.beta_t == 0.0 {
                0.0
            } else {
                self.beta_t * self.cov.mahalanobis(phi.as_slice())?
            };
            scores.push(f + bonus);
            feats.push(phi);
        }
        let a = argmax_lowest(&scores)?;
        self.last_choice = Some((arms[a].clone(), feats.swap_remove(a)));
        Ok(a)
    }

    fn observe(&mut self, _t: usize, _arm: usize, reward: f64) -> Result<()> {
        let (x, phi) = self
            .last_choice
            .take()
            .ok_or_else(|| Error::input("observe called without a preceding select"))?;
        self.cov.rank_one_update(phi.as_slice())?;
        self.history_x.push(x);
        self.history_r.push(reward);
        Ok(())
    }

    fn batch_index(&self) -> usize {
        self.round_starts.len()
    }

    fn batch_starts(&self) -> &[usize] {
        &self.round_starts
    }

    fn covariance(&self) -> Option<&CovarianceState> {
        Some(&self.cov)
    }
}
