// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counterfactual consistency: does the explanation generated from a
//! perturbed representation `E(z) + ν` state the label that `M` assigns to
//! the nearest input whose prediction differs from `z`'s?

use std::io::Write;
use std::path::Path;

use gradcore::tensor::argmax;
use gradcore::{InterventionSpec, ProbVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::macro_f1;
use crate::models::{ClassifierHead, Explainer, FrozenClassifier, FusedRepresentation};
use crate::synthdata::{LabelLexicon, MultimodalInput, TokenId};
use crate::{Tape, Tensor};

/// Anything that turns a representation into a token sequence.
pub trait Explain {
    fn explain(&self, c: &[f64]) -> Result<Vec<TokenId>>;
}

impl Explain for Explainer {
    fn explain(&self, c: &[f64]) -> Result<Vec<TokenId>> {
        self.generate_explanation(&FusedRepresentation(c.to_vec()), self.dims().max_len)
    }
}

/// Adapts a closure to [`Explain`].
pub struct FnExplainer<F>(pub F);

impl<F: Fn(&[f64]) -> Vec<TokenId>> Explain for FnExplainer<F> {
    fn explain(&self, c: &[f64]) -> Result<Vec<TokenId>> {
        Ok((self.0)(c))
    }
}

/// Class of the first label token in `seq`, or `None` if it has none.
pub fn extract_label(seq: &[TokenId], lexicon: &LabelLexicon) -> Option<usize> {
    seq.iter().find_map(|&t| lexicon.class_of(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub base: usize,
    pub neighbor: usize,
    /// `z′ − z` in the search space.
    pub mu: Vec<f64>,
    pub distance: f64,
    /// `M`'s prediction on the neighbour.
    pub target_class: usize,
}

/// Index of the nearest point (Euclidean) whose prediction differs from
/// point `i`'s. Ties go to the lowest index.
pub fn nearest_flipped(points: &[Vec<f64>], preds: &[usize], i: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in points.iter().enumerate() {
        if preds[j] == preds[i] {
            continue;
        }
        let d2: f64 = p.iter().zip(&points[i]).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.map_or(true, |(_, bd)| d2 < bd) {
            best = Some((j, d2));
        }
    }
    best.map(|(j, d2)| (j, d2.sqrt()))
}

/// Search-space points and predictions of `M` for a test set.
pub fn search_space(test: &[MultimodalInput], m: &FrozenClassifier) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let points = test
        .iter()
        .map(|z| m.encoder().input_representation(z))
        .collect::<Result<Vec<_>>>()?;
    let preds = test.iter().map(|z| m.predict(z)).collect::<Result<Vec<_>>>()?;
    Ok((points, preds))
}

/// The counterfactual for `test[i]`, or `None` when every item shares its
/// prediction.
pub fn nearest_counterfactual(i: usize, test: &[MultimodalInput], m: &FrozenClassifier) -> Result<Option<CounterfactualPair>> {
    if i >= test.len() {
        return Err(CoreError::InvalidInput(format!("item {i} out of range")));
    }
    let (points, preds) = search_space(test, m)?;
    Ok(nearest_flipped(&points, &preds, i).map(|(j, d)| CounterfactualPair {
        base: i,
        neighbor: j,
        mu: points[j].iter().zip(&points[i]).map(|(a, b)| a - b).collect(),
        distance: d,
        target_class: preds[j],
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub threshold: f64,
    pub step_size: f64,
}

impl Default for NuConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iter: 500,
            threshold: 0.6,
            step_size: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuPerturbation {
    pub nu: Vec<f64>,
    pub converged: bool,
    /// Gradient steps taken.
    pub iterations: usize,
}

impl NuPerturbation {
    pub fn norm(&self) -> f64 {
        self.nu.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradient descent on `CE(C₁(c + ν), target) + λ‖ν‖²` from `init` (zero by
/// default), stopping once `C₁` predicts `target` with probability at least
/// `threshold`.
pub fn optimize_nu(
    c: &[f64],
    target: usize,
    head: &ClassifierHead,
    cfg: &NuConfig,
    init: Option<&[f64]>,
) -> Result<NuPerturbation> {
    let (_, logits) = head.run(c, &InterventionSpec::empty())?;
    if target >= logits.len() {
        return Err(CoreError::InvalidInput(format!("target class {target} out of range")));
    }
    if argmax(&logits) == target {
        return Err(CoreError::InvalidInput(
            "target class already predicted; no perturbation needed".into(),
        ));
    }
    let mut nu = match init {
        Some(v) if v.len() == c.len() => v.to_vec(),
        Some(v) => {
            return Err(CoreError::InvalidInput(format!(
                "initial perturbation has width {}, expected {}",
                v.len(),
                c.len()
            )))
        }
        None => vec![0.0; c.len()],
    };
    let base = Tensor::vector(c.to_vec());
    for iter in 0..=cfg.max_iter {
        let mut t = Tape::new();
        let nu_var = t.variable(Tensor::vector(nu.clone()));
        let c_var = t.input(base.clone());
        let x = t.add(c_var, nu_var)?;
        let pass = head.forward(&mut t, x, &InterventionSpec::empty())?;
        let logits = t.value(pass.logits).data();
        let p = ProbVector::from_logits(logits)?;
        if argmax(logits) == target && p.values()[target] >= cfg.threshold {
            return Ok(NuPerturbation {
                nu,
                converged: true,
                iterations: iter,
            });
        }
        if iter == cfg.max_iter {
            break;
        }
        let ce = t.cross_entropy(pass.logits, target)?;
        let reg = t.sq_norm(nu_var);
        let loss = t.weighted_sum(&[(ce, 1.0), (reg, cfg.lambda)])?;
        let grads = t.backward(loss)?;
        let g = grads
            .wrt(nu_var)
            .ok_or_else(|| CoreError::InvalidInput("perturbation received no gradient".into()))?;
        for (v, gv) in nu.iter_mut().zip(g.data()) {
            *v -= cfg.step_size * gv;
        }
    }
    Ok(NuPerturbation {
        nu,
        converged: false,
        iterations: cfg.max_iter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmrItem {
    pub item: usize,
    /// `M`'s prediction on the item.
    pub y1: usize,
    /// `None` when no counterfactual exists.
    pub neighbor: Option<usize>,
    /// `M`'s prediction on the counterfactual.
    pub y1_cf: Option<usize>,
    pub feasible: bool,
    /// Label stated by the explanation generated from `E(z) + ν`.
    pub y2_cf: Option<usize>,
    pub nu_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcmrReport {
    /// Macro-F1 over feasible items, in percent.
    pub ccmr: f64,
    /// Feasible generations over attempted items, in percent.
    pub pct_gen: f64,
    pub composite: f64,
    pub attempted: usize,
    pub feasible: usize,
    pub skipped: usize,
    pub converged: usize,
    pub empty_feasible_set: bool,
    pub f1_averaging: String,
    pub feasibility_rule: String,
    pub items: Vec<CcmrItem>,
}

/// Harmonic mean of two non-negative scores; 0 if either is 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn ccmr_score(
    test: &[MultimodalInput],
    m: &FrozenClassifier,
    explainer: &impl Explain,
    lexicon: &LabelLexicon,
    cfg: &NuConfig,
) -> Result<CcmrReport> {
    let (points, preds) = search_space(test, m)?;
    let mut items = Vec::with_capacity(test.len());
    for (i, z) in test.iter().enumerate() {
        let Some((j, _)) = nearest_flipped(&points, &preds, i) else {
            items.push(CcmrItem {
                item: i,
                y1: preds[i],
                neighbor: None,
                y1_cf: None,
                feasible: false,
                y2_cf: None,
                nu_norm: 0.0,
                iterations: 0,
                converged: false,
            });
            continue;
        };
        let c = m.encode(z)?;
        let nu = optimize_nu(c.values(), preds[j], m.head(), cfg, None)?;
        let perturbed: Vec<f64> = c.values().iter().zip(&nu.nu).map(|(a, b)| a + b).collect();
        let y2 = extract_label(&explainer.explain(&perturbed)?, lexicon);
        items.push(CcmrItem {
            item: i,
            y1: preds[i],
            neighbor: Some(j),
            y1_cf: Some(preds[j]),
            feasible: y2.is_some(),
            y2_cf: y2,
            nu_norm: nu.norm(),
            iterations: nu.iterations,
            converged: nu.converged,
        });
    }
    Ok(summarize(items))
}

fn summarize(items: Vec<CcmrItem>) -> CcmrReport {
    let attempted = items.iter().filter(|r| r.neighbor.is_some()).count();
    let (mut x, mut z) = (Vec::new(), Vec::new());
    for r in items.iter().filter(|r| r.feasible) {
        x.push(r.y1_cf.expect("feasible items have a counterfactual"));
        z.push(r.y2_cf);
    }
    let feasible = x.len();
    let ccmr = if feasible == 0 { 0.0 } else { 100.0 * macro_f1(&x, &z) };
    let pct_gen = if attempted == 0 {
        0.0
    } else {
        100.0 * feasible as f64 / attempted as f64
    };
    CcmrReport {
        ccmr,
        pct_gen,
        composite: harmonic_mean(ccmr, pct_gen),
        attempted,
        feasible,
        skipped: items.len() - attempted,
        converged: items.iter().filter(|r| r.converged).count(),
        empty_feasible_set: feasible == 0,
        f1_averaging: "macro".into(),
        feasibility_rule: "explanation contains any label token".into(),
        items,
    }
}

impl CcmrReport {
    pub fn write_items_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(w, "item,y1,y1_cf,feasible,y2_cf,nu_norm,iterations")?;
        for r in &self.items {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.item,
                r.y1,
                opt(r.y1_cf),
                r.feasible,
                opt(r.y2_cf),
                r.nu_norm,
                r.iterations
            )?;
        }
        Ok(())
    }

    pub fn save_items_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        self.write_items_csv(&mut f).map_err(|e| CoreError::io(path, e))
    }
}
