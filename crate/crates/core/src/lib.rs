//! Batched neural contextual bandits.
//!
//! The crate implements BatchNeuralUCB: a UCB policy whose reward model is a
//! fully connected ReLU network and whose exploration bonus is the Mahalanobis
//! norm of the network's parameter gradient under a regularized covariance.
//! The policy may only change at batch boundaries, chosen either on a fixed
//! grid or adaptively from the growth of the covariance determinant.
//!
//! Module map:
//! - [`covariance`]: regularized gradient-feature covariance with rank-one
//!   inverse and log-determinant maintenance.
//! - [`network`]: the ReLU network, symmetric initialization, gradients and
//!   regularized training.
//! - [`ntk`]: neural tangent kernel gram matrices and effective dimension.
//! - [`policy`]: batch schemes, confidence schedules, BatchNeuralUCB and the
//!   baselines (sequential NeuralUCB, LinUCB, uniform random).
//! - [`env`]: synthetic and dataset-backed reward environments.
//! - [`harness`]: experiment configuration, seeded execution and CSV output.
//! - [`diagnostics`]: self-check suites used by the command-line tool.

pub mod covariance;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod harness;
pub mod network;
pub mod ntk;
pub mod policy;
pub mod seed;

pub use error::{Error, Result};
