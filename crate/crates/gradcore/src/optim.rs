// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adam with bias correction.

use std::collections::HashMap;

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: u32,
}

/// Optimizer state for one [`ParamStore`]; moments are kept per parameter.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    state: HashMap<String, Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &HashMap<String, Tensor<S>>) -> Result<()> {
        self.step_with_lr(params, grads, self.config.lr)
    }

    /// One update using `lr` in place of the configured rate. Parameters
    /// without a gradient entry are left untouched. All gradients are
    /// validated before anything is written.
    pub fn step_with_lr(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &HashMap<String, Tensor<S>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(GradError::Shape {
                    op: "adam",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(GradError::NonFiniteGradient(name.clone()));
            }
        }
        let (b1, b2) = (S::lit(self.config.beta1), S::lit(self.config.beta2));
        let (eps, lr) = (S::lit(self.config.eps), S::lit(lr));
        // Deterministic order regardless of map iteration.
        let mut names: Vec<&String> = grads.keys().collect();
        names.sort();
        for name in names {
            let g = grads[name].data();
            let p = params.get_mut(name)?;
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![S::zero(); g.len()],
                v: vec![S::zero(); g.len()],
                t: 0,
            });
            st.t += 1;
            let c1 = S::one() - b1.powi(st.t as i32);
            let c2 = S::one() - b2.powi(st.t as i32);
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                st.m[k] = b1 * st.m[k] + (S::one() - b1) * g[k];
                st.v[k] = b2 * st.v[k] + (S::one() - b2) * g[k] * g[k];
                let m_hat = st.m[k] / c1;
                let v_hat = st.v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// First and second moments of `name`, if it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&[S], &[S])> {
        self.state.get(name).map(|s| (s.m.as_slice(), s.v.as_slice()))
    }
}
