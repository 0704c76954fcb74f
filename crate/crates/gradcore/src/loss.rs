// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probability vectors, KL divergence and the parameter-space distance.

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Floor applied to the second argument of KL before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Logarithm base for KL values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    pub fn ln_base<S: Scalar>(self) -> S {
        match self {
            LogBase::Natural => S::one(),
            LogBase::Ten => S::lit(std::f64::consts::LN_10),
        }
    }
}

/// A distribution over classes: entries in (0, 1) summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<S> {
    values: Tensor<S>,
}

impl<S: Scalar> ProbVector<S> {
    /// Tolerance on the total mass.
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(GradError::InvalidProb("empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > S::zero() && **v < S::one())) {
            if !(values.len() == 1 && *v == S::one()) {
                return Err(GradError::InvalidProb(format!("entry {v} outside (0,1)")));
            }
        }
        let total: S = values.iter().copied().sum();
        if (total - S::one()).abs().as_f64() > Self::SUM_TOL {
            return Err(GradError::InvalidProb(format!("entries sum to {total}")));
        }
        Ok(Self {
            values: Tensor::vector(values),
        })
    }

    /// Softmax of `logits`, which always yields a valid distribution for finite input.
    pub fn from_logits(logits: &[S]) -> Result<Self> {
        let p = tensor::softmax(logits);
        // Extreme logits saturate entries to exactly 0 or 1; nudge onto the floor.
        let floor = S::lit(PROB_FLOOR);
        if p.len() > 1 && p.iter().any(|&v| v <= S::zero() || v >= S::one()) {
            let clamped: Vec<S> = p.iter().map(|&v| v.max(floor)).collect();
            let z: S = clamped.iter().copied().sum();
            return Self::new(clamped.into_iter().map(|v| v / z).collect());
        }
        Self::new(p)
    }

    pub fn values(&self) -> &[S] {
        self.values.data()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn argmax(&self) -> usize {
        self.values.argmax()
    }
}

/// `Σ pᵢ ln(pᵢ / max(qᵢ, floor))`, skipping `pᵢ = 0` terms.
pub(crate) fn kl_raw<S: Scalar>(p: &[S], q: &[S]) -> S {
    let floor = S::lit(PROB_FLOOR);
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > S::zero())
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(floor).ln()))
        .sum()
}

/// KL(p ‖ q) in the requested base.
pub fn kl_divergence<S: Scalar>(p: &ProbVector<S>, q: &ProbVector<S>, base: LogBase) -> Result<S> {
    if p.len() != q.len() {
        return Err(GradError::Shape {
            op: "kl_divergence",
            expected: vec![p.len()],
            got: vec![q.len()],
        });
    }
    Ok(kl_raw(p.values(), q.values()) / base.ln_base::<S>())
}

/// Square root of the summed squared element differences over every tensor
/// of two stores with identical layout.
pub fn frobenius_distance<S: Scalar>(a: &ParamStore<S>, b: &ParamStore<S>) -> Result<S> {
    a.check_same_layout(b)?;
    let mut acc = S::zero();
    for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            acc += (x - y) * (x - y);
        }
    }
    Ok(acc.sqrt())
}
