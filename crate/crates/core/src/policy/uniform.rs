use rand::Rng;

use super::BanditPolicy;
use crate::error::{Error, Result};
use crate::seed::{substream, StreamRng};

/// Picks an arm uniformly at random every round. Never updates.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    rng: StreamRng,
    starts: Vec<usize>,
}

impl UniformRandom {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: substream(seed, "uniform", 0),
            starts: Vec::new(),
        }
    }
}

impl BanditPolicy for UniformRandom {
    fn begin_round(&mut self, t: usize) -> Result<bool> {
        if self.starts.is_empty() {
            self.starts.push(t);
            return Ok(true);
        }
        Ok(false)
    }

    fn select(&mut self, arms: &[Vec<f64>]) -> Result<usize> {
        if arms.is_empty() {
            return Err(Error::input("no arms to choose from"));
        }
        Ok(self.rng.gen_range(0..arms.len()))
    }

    fn observe(&mut self, _t: usize, _arm: usize, _reward: f64) -> Result<()> {
        Ok(())
    }

    fn batch_index(&self) -> usize {
        self.starts.len()
    }

    fn batch_starts(&self) -> &[usize] {
        &self.starts
    }
}
