//! Partially equivariant graph neural networks for multi-agent RL.
//!
//! This crate bundles everything needed to train and probe graph policies
//! whose degree of O(n) equivariance is itself learnable:
//!
//! - [`tensor`] — dense f64 tensors and a Wengert tape for reverse-mode
//!   differentiation, sized for small MLPs and graph-layer algebra.
//! - [`nn`] — two-hidden-layer MLPs and an Adam optimizer.
//! - [`graph`] — the partially equivariant layer with its per-node symmetry
//!   score, plus EGNN / E2GN2 / plain-GNN baselines and policy/value networks.
//! - [`symmetry`] — orthogonal group actions and measurement of approximate,
//!   subgroup, feature-wise, and regional equivariance.
//! - [`env`] — desk-scale particle worlds (cooperative spread, predator-prey
//!   tag) with optional sensor-bias, safety-region, and decoy asymmetries.
//! - [`rl`] — PPO with GAE over those environments, driving any of the four
//!   architectures and logging symmetry-score statistics.
//! - [`checks`] — the numerical verification suite (limit-case equivalences,
//!   equivariance, gradient checks, environment symmetry).
//!
//! The crate is `no_std` + `alloc`; every floating-point transcendental goes
//! through `libm` so results are identical with and without the `std` feature.

#![no_std]
#![deny(unsafe_op_in_unsafe_fn)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checks;
pub mod env;
pub mod error;
pub mod graph;
mod math;
pub mod nn;
pub mod rl;
pub mod symmetry;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
