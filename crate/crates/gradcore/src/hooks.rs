// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation overrides applied during a forward pass.

use std::collections::HashSet;

use crate::error::{GradError, Result};
use crate::scalar::Scalar;

/// One scalar activation: `neuron` of the hookable layer `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub layer: usize,
    pub neuron: usize,
}

impl Coord {
    pub fn new(layer: usize, neuron: usize) -> Self {
        Self { layer, neuron }
    }
}

/// Neuron coordinates paired with the values they are frozen at.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterventionSpec<S> {
    coords: Vec<Coord>,
    values: Vec<S>,
}

impl<S: Scalar> InterventionSpec<S> {
    pub fn empty() -> Self {
        Self {
            coords: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn new(coords: Vec<Coord>, values: Vec<S>) -> Result<Self> {
        if coords.len() != values.len() {
            return Err(GradError::InvalidSpec(format!(
                "{} coordinates but {} values",
                coords.len(),
                values.len()
            )));
        }
        let mut seen = HashSet::with_capacity(coords.len());
        for c in &coords {
            if !seen.insert(*c) {
                return Err(GradError::InvalidSpec(format!("duplicate coordinate {c:?}")));
            }
        }
        Ok(Self { coords, values })
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    /// `(neuron, value)` overrides targeting `layer`.
    pub fn for_layer(&self, layer: usize) -> Vec<(usize, S)> {
        self.coords
            .iter()
            .zip(&self.values)
            .filter(|(c, _)| c.layer == layer)
            .map(|(c, &v)| (c.neuron, v))
            .collect()
    }

    /// Rejects coordinates naming a layer outside `widths` or a neuron past its width.
    pub fn validate(&self, widths: &[usize]) -> Result<()> {
        for c in &self.coords {
            let width = *widths.get(c.layer).ok_or_else(|| {
                GradError::InvalidSpec(format!("layer {} does not exist", c.layer))
            })?;
            if c.neuron >= width {
                return Err(GradError::HookOutOfRange {
                    neuron: c.neuron,
                    width,
                });
            }
        }
        Ok(())
    }
}
