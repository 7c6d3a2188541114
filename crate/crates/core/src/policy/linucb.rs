use super::{argmax_lowest, BanditPolicy};
use crate::covariance::{CovarianceState, Representation};
use crate::error::{Error, Result};

/// Ridge statistics `A = λI + Σ x xᵀ`, `b = Σ r x`.
#[derive(Debug, Clone)]
pub struct LinUcbState {
    a: CovarianceState,
    b: Vec<f64>,
}

impl LinUcbState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Ok(Self {
            a: CovarianceState::with_representation(dim, lambda, Representation::Dense)?,
            b: vec![0.0; dim],
        })
    }

    pub fn update(&mut self, x: &[f64], reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::input("non-finite reward"));
        }
        self.a.rank_one_update(x)?;
        for (bi, xi) in self.b.iter_mut().zip(x) {
            *bi += reward * xi;
        }
        Ok(())
    }

    /// Ridge estimate `A⁻¹ b`.
    pub fn theta_hat(&self) -> Result<Vec<f64>> {
        self.a.inverse_apply(&self.b)
    }

    pub fn covariance(&self) -> &CovarianceState {
        &self.a
    }

    /// `xᵀθ̂ + β‖x‖_{A⁻¹}` for every arm.
    pub fn scores(&self, arms: &[Vec<f64>], beta: f64) -> Result<Vec<f64>> {
        let theta = self.theta_hat()?;
        arms.iter()
            .map(|x| {
                if x.len() != theta.len() {
                    return Err(Error::input(format!(
                        "arm has dimension {}, expected {}",
                        x.len(),
                        theta.len()
                    )));
                }
                let mean: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
                Ok(mean + beta * self.a.mahalanobis(x)?)
            })
            .collect()
    }
}

/// Sequential LinUCB on the preprocessed contexts.
#[derive(Debug, Clone)]
pub struct LinUcb {
    state: LinUcbState,
    beta: f64,
    last: Option<Vec<f64>>,
    starts: Vec<usize>,
}

impl LinUcb {
    pub fn new(dim: usize, lambda: f64, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::config(format!(
                "beta must be nonnegative, got {beta}"
            )));
        }
        Ok(Self {
            state: LinUcbState::new(dim, lambda)?,
            beta,
            last: None,
            starts: Vec::new(),
        })
    }

    pub fn state(&self) -> &LinUcbState {
        &self.state
    }
}

impl BanditPolicy for LinUcb {
    fn begin_round(&mut self, t: usize) -> Result<bool> {
        self.starts.push(t);
        Ok(true)
    }

    fn select(&mut self, arms: &[Vec<f64>]) -> Result<usize> {
        let scores = self.state.scores(arms, self.beta)?;
        let a = argmax_lowest(&scores)?;
        self.last = Some(arms[a].clone());
        Ok(a)
    }

    fn observe(&mut self, _t: usize, _arm: usize, reward: f64) -> Result<()> {
        let x = self
            .last
            .take()
            .ok_or_else(|| Error::input("observe called without a preceding select"))?;
        self.state.update(&x, reward)
    }

    fn batch_index(&self) -> usize {
        self.starts.len()
    }

    fn batch_starts(&self) -> &[usize] {
        &self.starts
    }

    fn covariance(&self) -> Option<&CovarianceState> {
        Some(self.state.covariance())
    }
}
