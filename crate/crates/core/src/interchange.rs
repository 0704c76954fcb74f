// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interchange interventions on the hidden layer of `C₁` and `C₂`.

use std::io::Write;
use std::path::Path;

use gradcore::{Coord, InterventionSpec, ProbVector};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::models::{ClassifierHead, Explainer, FrozenClassifier, HIDDEN_LAYER};

/// Intervened output distributions of both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionOutcome {
    pub p_int_c1: ProbVector<f64>,
    pub p_int_c2: ProbVector<f64>,
}

/// `⌈fraction · width⌉` distinct hidden-layer coordinates, uniform without
/// replacement, in the order drawn.
pub fn sample_neurons<R: Rng + ?Sized>(width: usize, fraction: f64, rng: &mut R) -> Result<Vec<Coord>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CoreError::InvalidInput(format!(
            "sampling fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if width == 0 {
        return Err(CoreError::InvalidInput("layer has no neurons".into()));
    }
    let k = ((fraction * width as f64).ceil() as usize).min(width);
    Ok(rand::seq::index::sample(rng, width, k)
        .into_iter()
        .map(|n| Coord::new(HIDDEN_LAYER, n))
        .collect())
}

/// Runs `head` on `source` with the neurons at `coords` frozen to the values
/// they take when `head` runs on `base`.
pub fn intervene_head(head: &ClassifierHead, base: &[f64], source: &[f64], coords: &[Coord]) -> Result<ProbVector<f64>> {
    let (hidden, _) = head.run(base, &InterventionSpec::empty())?;
    let values = coords
        .iter()
        .map(|c| {
            hidden.get(c.neuron).copied().ok_or_else(|| {
                CoreError::Grad(gradcore::GradError::HookOutOfRange {
                    neuron: c.neuron,
                    width: hidden.len(),
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = InterventionSpec::new(coords.to_vec(), values)?;
    let (_, logits) = head.run(source, &spec)?;
    Ok(ProbVector::from_logits(&logits)?)
}

/// Matched interventions on two structurally identical heads, each fed the
/// same base and source representations. Each head captures its own base
/// activations.
pub fn interchange(
    c1: &ClassifierHead,
    c2: &ClassifierHead,
    c_base: &[f64],
    c_source: &[f64],
    coords: &[Coord],
) -> Result<InterventionOutcome> {
    c1.params.check_same_layout(&c2.params)?;
    Ok(InterventionOutcome {
        p_int_c1: intervene_head(c1, c_base, c_source, coords)?,
        p_int_c2: intervene_head(c2, c_base, c_source, coords)?,
    })
}

/// Matched interventions between `M`'s head on `c` and the explainer's head
/// on `F(c)`.
pub fn interchange_through_explainer(
    m: &FrozenClassifier,
    explainer: &Explainer,
    c_base: &[f64],
    c_source: &[f64],
    coords: &[Coord],
) -> Result<InterventionOutcome> {
    let f_base = explainer.pipeline(c_base)?;
    let f_source = explainer.pipeline(c_source)?;
    Ok(InterventionOutcome {
        p_int_c1: intervene_head(m.head(), c_base, c_source, coords)?,
        p_int_c2: intervene_head(&explainer.c2, &f_base, &f_source, coords)?,
    })
}

/// Repetitions `N` of a `ps`-fraction uniform draw needed so that every one
/// of `n` neurons is drawn at least once with probability `1 − delta`:
/// `⌈(ln n − ln δ) / (−ln(1 − ps))⌉`.
pub fn coverage_repetitions(n: u64, delta: f64, ps: f64) -> Result<u64> {
    if n == 0 {
        return Err(CoreError::InvalidInput("neuron count must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CoreError::InvalidInput(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(ps > 0.0 && ps < 1.0) {
        return Err(CoreError::InvalidInput(format!("ps must lie in (0, 1), got {ps}")));
    }
    let bound = ((n as f64).ln() - delta.ln()) / -(1.0 - ps).ln();
    Ok(bound.ceil() as u64)
}

/// Which hidden neurons were intervened on at each training step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageLog {
    pub entries: Vec<(usize, Vec<usize>)>,
}

impl CoverageLog {
    pub fn record(&mut self, step: usize, coords: &[Coord]) {
        self.entries.push((step, coords.iter().map(|c| c.neuron).collect()));
    }

    /// First step after which all `width` neurons have been intervened on.
    pub fn full_coverage_step(&self, width: usize) -> Option<usize> {
        let mut seen = vec![false; width];
        let mut remaining = width;
        for (step, neurons) in &self.entries {
            for &n in neurons {
                if n < width && !seen[n] {
                    seen[n] = true;
                    remaining -= 1;
                }
            }
            if remaining == 0 {
                return Some(*step);
            }
        }
        None
    }

    /// Number of distinct neurons covered by the first `steps` entries.
    pub fn covered_within(&self, width: usize, steps: usize) -> usize {
        let mut seen = vec![false; width];
        for (_, neurons) in self.entries.iter().take(steps) {
            for &n in neurons {
                if n < width {
                    seen[n] = true;
                }
            }
        }
        seen.iter().filter(|&&s| s).count()
    }

    /// CSV with columns `step,neurons`; neuron ids are `;`-separated.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step,neurons")?;
        for (step, neurons) in &self.entries {
            let ids: Vec<String> = neurons.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{step},{}", ids.join(";"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        self.write_csv(&mut f).map_err(|e| CoreError::io(path, e))
    }
}
