//! Dense linear algebra and multilayer perceptrons with analytic gradients.
//!
//! Everything is `f64`. Gradients come in two flavors:
//!
//! - reverse mode ([`Mlp::backward_batch`]) for loss gradients, and
//! - forward mode ([`Mlp::jvp_batch`]) for directional derivatives of the
//!   network output, which the TRPO Fisher-vector product needs.
//!
//! Parameters of a network flatten into a single `Vec<f64>` (per layer:
//! weights row-major, then biases) so optimizers and the conjugate-gradient
//! solver operate on plain slices.

mod adam;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use matrix::{solve_spd, Matrix};
pub use mlp::{Activation, BatchCache, Layer, Mlp};
