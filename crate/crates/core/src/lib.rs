// SPDX-License-Identifier: MIT OR Apache-2.0

//! Causal explanation training for multimodal classifiers.
//!
//! A frozen classifier `M = C₁ ∘ E` maps an input `z` to a fused
//! representation `c` and a label distribution. An explainer generates a
//! textual explanation from `c`, and a replica head `C₂` reads the
//! explanation's aggregated logits back into a label distribution. Training
//! pushes the explainer to be causally faithful to `C₁` through
//! interchange interventions on hidden neurons.
//!
//! Modules:
//! - [`synthdata`]: the synthetic multimodal task and its JSONL format.
//! - [`models`]: encoder, heads, explanation model, aggregator.
//! - [`interchange`]: neuron sampling, interventions, the coverage bound.
//! - [`training`]: classifier training, filtering, the explainer objective.
//! - [`ccmr`]: the counterfactual-consistency metric.
//! - [`metrics`]: macro-F1, BLEU, token overlap.
//! - [`config`]: run configuration.

pub mod ccmr;
pub mod config;
mod error;
pub mod interchange;
pub mod metrics;
pub mod models;
pub mod synthdata;
pub mod training;

pub use error::{CoreError, Result};

pub type Tensor = gradcore::Tensor64;
pub type Tape = gradcore::Tape64;
pub type Params = gradcore::ParamStore64;
pub type Hooks = gradcore::InterventionSpec64;
