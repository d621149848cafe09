//! Action-guided adversarial imitation learning on classic-control tasks.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`numcore`] — dense matrices, multilayer perceptrons with analytic
//!   gradients (reverse and forward mode), and an Adam optimizer.
//! - [`envs`] — seedable CartPole, Pendulum and PointMass dynamics.
//! - [`demos`] — expert trajectory recording, action masking by an
//!   incompleteness ratio, and the on-disk demonstration format.
//! - [`policy`] — stochastic categorical/Gaussian policies with a shared
//!   value head and generalized advantage estimation.
//! - [`trpo`] — KL-constrained natural-gradient updates via conjugate
//!   gradient and backtracking line search.
//! - [`adversary`] — state-only and state-action discriminators.
//! - [`guide`] — the posterior network scoring demonstrated actions
//!   against policy actions.
//! - [`trainer`] — the full training loops (AGAIL, GAIL, state-GAIL,
//!   TRPO on true rewards, behavior cloning) and metrics.
//! - [`cli`] — the experiment command surface and file emission.

pub mod adversary;
pub mod cli;
pub mod demos;
pub mod envs;
pub mod error;
pub mod guide;
pub mod numcore;
pub mod policy;
pub mod rng;
pub mod trainer;
pub mod trpo;

pub use error::{AgailError, Result};
