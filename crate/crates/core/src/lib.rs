//! Derivative-free gradient estimation on submanifolds.
//!
//! The crate estimates Riemannian gradients from sampled function values with
//! a Markov-normalized vector kernel, drives those estimates through a
//! retraction-based descent loop, and ships two experiments built on top:
//! lattice sphere packing over SL(n) and tomographic reconstruction from
//! projections taken at unknown angles.
//!
//! Module map:
//! - [`kernel_gradient`]: the gradient estimators, the learning-gradient
//!   baseline and the benchmark harness comparing them.
//! - [`manifold_opt`]: the descent loop, retractions and samplers.
//! - [`diffusion_map`]: kernel matrices, Markov normalization and spectral
//!   embedding.
//! - [`lattice_packing`]: shortest-vector enumeration and the packing run.
//! - [`tomography`]: phantom, Radon transform, angle recovery, sign
//!   determination and filtered back projection.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion_map;
mod error;
pub mod io;
pub mod kernel_gradient;
pub mod lattice_packing;
pub mod manifold_opt;
pub mod rng;
pub mod tomography;

pub use error::{Error, Result};
