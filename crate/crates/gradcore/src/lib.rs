// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense reverse-mode automatic differentiation with activation hooks.
//!
//! The engine records eagerly evaluated operations on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar node returns gradients for every trainable
//! parameter that took part in the computation. Hidden activations can be
//! overridden during the forward pass through [`Tape::intervene`], which is
//! how interchange interventions are implemented downstream.
//!
//! Everything is generic over a [`Scalar`] (implemented for `f32` and `f64`);
//! the `*64` / `*32` aliases below are the concrete types used in practice.

pub mod checkpoint;
mod error;
pub mod hooks;
pub mod loss;
pub mod optim;
pub mod params;
mod scalar;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{GradError, Result};
pub use hooks::{Coord, InterventionSpec};
pub use loss::{frobenius_distance, kl_divergence, LogBase, ProbVector, PROB_FLOOR};
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ProbVector64 = ProbVector<f64>;
pub type Gradients64 = Gradients<f64>;
pub type Adam64 = Adam<f64>;
pub type InterventionSpec64 = InterventionSpec<f64>;
