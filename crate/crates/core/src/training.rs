// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-phase training: fit and freeze `M`, filter the data through it, then
//! train the explainer with the four-term objective.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use gradcore::{Adam, AdamConfig, Coord, InterventionSpec, LogBase, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::interchange::{intervene_head, sample_neurons, CoverageLog};
use crate::metrics::macro_f1;
use crate::models::{Classifier, ClassifierHead, Explainer, FrozenClassifier, FusedRepresentation, ModelDims};
use crate::synthdata::{Example, LabelLexicon, MultimodalInput, TokenId};
use crate::{Params, Tape, Tensor};

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredExample {
    pub input: MultimodalInput,
    pub m_prediction: usize,
    /// Present iff `M` predicted the gold label.
    pub explanation: Option<Vec<TokenId>>,
}

/// Keeps every input; retains the gold explanation only where `M` is right,
/// with its label token set to `M`'s label.
pub fn filter_dataset(
    examples: &[Example],
    m: &FrozenClassifier,
    lexicon: &LabelLexicon,
) -> Result<Vec<FilteredExample>> {
    examples
        .iter()
        .map(|ex| {
            let y = m.predict(&ex.input)?;
            let explanation = (y == ex.gold_label).then(|| {
                let mut e = ex.explanation.clone();
                if let Some(first) = e.first_mut() {
                    *first = lexicon.token(y);
                }
                e
            });
            Ok(FilteredExample {
                input: ex.input.clone(),
                m_prediction: y,
                explanation,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Loss configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    PhiOnly,
    PhiTs,
    FullCause,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::PhiOnly, AblationMode::PhiTs, AblationMode::FullCause];

    pub fn flag(self) -> &'static str {
        match self {
            AblationMode::PhiOnly => "phi",
            AblationMode::PhiTs => "phi-ts",
            AblationMode::FullCause => "cause",
        }
    }

    fn uses_ts(self) -> bool {
        self != AblationMode::PhiOnly
    }

    fn uses_iit(self) -> bool {
        self == AblationMode::FullCause
    }
}

impl FromStr for AblationMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi" | "phi_only" => Ok(AblationMode::PhiOnly),
            "phi-ts" | "phi_ts" => Ok(AblationMode::PhiTs),
            "cause" | "full_cause" => Ok(AblationMode::FullCause),
            other => Err(CoreError::Config(format!(
                "unknown mode `{other}` (expected phi, phi-ts or cause)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub phi: f64,
    pub ts: f64,
    pub iit: f64,
    pub r_match: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            phi: 1.0,
            ts: 1.0,
            iit: 1.0,
            r_match: 1.0,
        }
    }
}

/// Unweighted loss components and the weighted total that was optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_phi: f64,
    pub l_ts: f64,
    pub l_iit: f64,
    pub r_match: f64,
    pub total: f64,
}

// ---------------------------------------------------------------------------
// Explainer objective
// ---------------------------------------------------------------------------

/// Everything the explainer objective needs from the frozen `M` for one item.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub c: Vec<f64>,
    pub c1_probs: Vec<f64>,
    pub m_prediction: usize,
    /// Language-model target: the explanation, or just the label token.
    pub target: Vec<TokenId>,
}

pub fn prepare_items(
    items: &[FilteredExample],
    m: &FrozenClassifier,
    lexicon: &LabelLexicon,
) -> Result<Vec<PreparedItem>> {
    items
        .iter()
        .map(|it| {
            let c = m.encode(&it.input)?;
            let (_, logits) = m.head().run(c.values(), &InterventionSpec::empty())?;
            let probs = gradcore::ProbVector::from_logits(&logits)?;
            let target = match &it.explanation {
                Some(e) if !e.is_empty() => e.clone(),
                _ => vec![lexicon.token(it.m_prediction)],
            };
            Ok(PreparedItem {
                c: c.0,
                c1_probs: probs.values().to_vec(),
                m_prediction: it.m_prediction,
                target,
            })
        })
        .collect()
}

/// The random choices of one step: base items, a source for each base, and
/// the intervened coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub bases: Vec<usize>,
    pub sources: Vec<usize>,
    pub coords: Vec<Coord>,
}

impl StepPlan {
    /// Each base gets a source drawn uniformly from the same batch.
    pub fn sample<R: Rng + ?Sized>(batch: &[usize], hidden_width: usize, fraction: f64, rng: &mut R) -> Result<Self> {
        if batch.is_empty() {
            return Err(CoreError::InvalidInput("empty batch".into()));
        }
        let sources = (0..batch.len()).map(|_| batch[rng.gen_range(0..batch.len())]).collect();
        Ok(Self {
            bases: batch.to_vec(),
            sources,
            coords: sample_neurons(hidden_width, fraction, rng)?,
        })
    }
}

/// Loss nodes recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_phi: Var,
    pub l_ts: Var,
    pub l_iit: Var,
    pub r_match: Var,
    pub total: Var,
}

fn mean(t: &mut Tape, terms: &[Var]) -> Result<Var> {
    let w = 1.0 / terms.len() as f64;
    let weighted: Vec<(Var, f64)> = terms.iter().map(|&v| (v, w)).collect();
    Ok(t.weighted_sum(&weighted)?)
}

fn input_vec(t: &mut Tape, v: &[f64]) -> Var {
    t.input(Tensor::vector(v.to_vec()))
}

/// Records `L_φ`, `L_TS`, `L_IIT`, `R_match` and the mode's weighted total.
///
/// `L_φ`, `L_TS` and `L_IIT` are batch means. The `C₁` side of every
/// intervention enters as a constant; on the `C₂` side gradients flow through
/// both the base and the source pass.
pub fn explainer_objective(
    t: &mut Tape,
    explainer: &Explainer,
    c1: &ClassifierHead,
    items: &[PreparedItem],
    plan: &StepPlan,
    mode: AblationMode,
    weights: &LossWeights,
) -> Result<LossVars> {
    let mut pos: HashMap<usize, usize> = HashMap::new();
    let mut cs = Vec::with_capacity(plan.bases.len());
    let mut phi_terms = Vec::new();
    let mut fs = Vec::new();
    let mut c2_hidden = Vec::new();
    let mut ts_terms = Vec::new();
    for &i in &plan.bases {
        let it = items
            .get(i)
            .ok_or_else(|| CoreError::InvalidInput(format!("item {i} out of range")))?;
        let c = input_vec(t, &it.c);
        phi_terms.push(explainer.lm.lm_loss(t, c, &it.target)?);
        let f = explainer.pipeline_on_tape(t, c)?;
        let pass = explainer.c2.forward(t, f, &InterventionSpec::empty())?;
        let q = t.softmax(pass.logits)?;
        let p = input_vec(t, &it.c1_probs);
        ts_terms.push(t.kl(p, q, LogBase::Natural)?);
        pos.entry(i).or_insert(fs.len());
        cs.push(c);
        fs.push(f);
        c2_hidden.push(pass.hidden);
    }

    let mut iit_terms = Vec::with_capacity(plan.bases.len());
    for (k, (&b, &s)) in plan.bases.iter().zip(&plan.sources).enumerate() {
        let sp = *pos
            .get(&s)
            .ok_or_else(|| CoreError::InvalidInput(format!("source {s} is not in the batch")))?;
        let p_int = intervene_head(c1, &items[b].c, &items[s].c, &plan.coords)?;
        let p = input_vec(t, p_int.values());
        let pass = explainer.c2.forward_interchanged(t, fs[sp], c2_hidden[k], &plan.coords)?;
        let q = t.softmax(pass.logits)?;
        iit_terms.push(t.kl(p, q, LogBase::Natural)?);
    }

    c1.params.check_same_layout(&explainer.c2.params)?;
    let mut pairs = Vec::with_capacity(c1.params.len());
    for name in c1.params.names() {
        let a = t.param(&c1.params, name)?;
        let b = t.param(&explainer.c2.params, name)?;
        pairs.push((a, b));
    }
    let r_match = t.frobenius(&pairs)?;

    let l_phi = mean(t, &phi_terms)?;
    let l_ts = mean(t, &ts_terms)?;
    let l_iit = mean(t, &iit_terms)?;
    let mut terms = vec![(l_phi, weights.phi)];
    if mode.uses_ts() {
        terms.push((l_ts, weights.ts));
    }
    if mode.uses_iit() {
        terms.push((l_iit, weights.iit));
        terms.push((r_match, weights.r_match));
    }
    let total = t.weighted_sum(&terms)?;
    Ok(LossVars {
        l_phi,
        l_ts,
        l_iit,
        r_match,
        total,
    })
}

/// One Adam state per trainable store of the explainer.
#[derive(Debug, Clone)]
pub struct ExplainerOptimizer {
    psi: Adam<f64>,
    phi: Adam<f64>,
    agg: Adam<f64>,
    c2: Adam<f64>,
}

impl ExplainerOptimizer {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            psi: Adam::new(config),
            phi: Adam::new(config),
            agg: Adam::new(config),
            c2: Adam::new(config),
        }
    }
}

fn step_store(opt: &mut Adam<f64>, store: &mut Params, grads: &gradcore::Gradients<f64>, lr: f64) -> Result<()> {
    let g = grads.for_store(store);
    Ok(opt.step_with_lr(store, &g, lr)?)
}

/// Builds the objective for `plan`, backpropagates the mode's total and
/// updates `ψ`, `φ`, `𝒜` and `C₂`.
pub fn explainer_step(
    explainer: &mut Explainer,
    opt: &mut ExplainerOptimizer,
    c1: &ClassifierHead,
    items: &[PreparedItem],
    plan: &StepPlan,
    mode: AblationMode,
    weights: &LossWeights,
    lr: f64,
) -> Result<LossBreakdown> {
    let mut t = Tape::new();
    let v = explainer_objective(&mut t, explainer, c1, items, plan, mode, weights)?;
    let b = LossBreakdown {
        l_phi: t.value(v.l_phi).item(),
        l_ts: t.value(v.l_ts).item(),
        l_iit: t.value(v.l_iit).item(),
        r_match: t.value(v.r_match).item(),
        total: t.value(v.total).item(),
    };
    for (name, val) in [
        ("l_phi", b.l_phi),
        ("l_ts", b.l_ts),
        ("l_iit", b.l_iit),
        ("r_match", b.r_match),
        ("total", b.total),
    ] {
        if !val.is_finite() {
            return Err(CoreError::NonFiniteLoss(name));
        }
    }
    let grads = t.backward(v.total)?;
    step_store(&mut opt.psi, &mut explainer.lm.psi, &grads, lr)?;
    step_store(&mut opt.phi, &mut explainer.lm.phi, &grads, lr)?;
    step_store(&mut opt.agg, &mut explainer.aggregator.params, &grads, lr)?;
    step_store(&mut opt.c2, &mut explainer.c2.params, &grads, lr)?;
    Ok(b)
}

// ---------------------------------------------------------------------------
// Phase one: the classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub seed: u64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Tail fraction of the training data held out for validation.
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub accuracy_floor: f64,
    /// Stop as soon as validation accuracy reaches this value (checked after
    /// every batch). Used to build deliberately weak classifiers.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            max_epochs: 40,
            batch_size: 16,
            lr: 3e-3,
            val_fraction: 0.1,
            patience: 3,
            accuracy_floor: 0.90,
            stop_at_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub epochs_run: usize,
    pub val_accuracy: f64,
    /// `(epoch, mean training loss, validation accuracy)`.
    pub history: Vec<(usize, f64, f64)>,
}

/// Predictions of a (possibly unfrozen) classifier for many inputs.
pub fn predict_all(m: &Classifier, inputs: &[&MultimodalInput]) -> Result<Vec<usize>> {
    let mut t = Tape::new();
    let mut out = Vec::with_capacity(inputs.len());
    for z in inputs {
        let l = m.forward(&mut t, z)?;
        out.push(gradcore::tensor::argmax(t.value(l).data()));
    }
    Ok(out)
}

fn val_accuracy(m: &Classifier, val: &[&Example]) -> Result<f64> {
    let inputs: Vec<&MultimodalInput> = val.iter().map(|e| &e.input).collect();
    let preds = predict_all(m, &inputs)?;
    let hits = preds.iter().zip(val).filter(|(p, e)| **p == e.gold_label).count();
    Ok(hits as f64 / val.len().max(1) as f64)
}

/// Trains `M` with Adam on cross-entropy until validation accuracy plateaus,
/// keeps the best epoch, checks the accuracy floor and freezes.
pub fn train_classifier(
    dims: ModelDims,
    train: &[Example],
    cfg: &ClassifierConfig,
) -> Result<(FrozenClassifier, ClassifierReport)> {
    if cfg.batch_size == 0 || !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0) {
        return Err(CoreError::Config("batch_size must be positive and val_fraction in (0, 1)".into()));
    }
    let n_val = ((train.len() as f64 * cfg.val_fraction).round() as usize).max(1);
    if n_val >= train.len() {
        return Err(CoreError::Config("not enough training data for a validation split".into()));
    }
    let (fit, val) = train.split_at(train.len() - n_val);
    let val: Vec<&Example> = val.iter().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = Classifier::new(dims, &mut rng);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut opt_enc = Adam::new(adam_cfg);
    let mut opt_head = Adam::new(adam_cfg);
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut best = (val_accuracy(&m, &val)?, m.clone());
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut epochs_run = 0;

    'epochs: for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut t = Tape::new();
            let mut terms = Vec::with_capacity(batch.len());
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let logits = m.forward(&mut t, &fit[i].input)?;
                terms.push((t.cross_entropy(logits, fit[i].gold_label)?, w));
            }
            let loss = t.weighted_sum(&terms)?;
            let lv = t.value(loss).item();
            if !lv.is_finite() {
                return Err(CoreError::NonFiniteLoss("classifier cross-entropy"));
            }
            loss_sum += lv * batch.len() as f64;
            let grads = t.backward(loss)?;
            let (g_enc, g_head) = (grads.for_store(&m.encoder.params), grads.for_store(&m.head.params));
            opt_enc.step(&mut m.encoder.params, &g_enc)?;
            opt_head.step(&mut m.head.params, &g_head)?;
            if let Some(target) = cfg.stop_at_accuracy {
                let acc = val_accuracy(&m, &val)?;
                if acc >= target {
                    best = (acc, m.clone());
                    history.push((epoch, loss_sum / fit.len() as f64, acc));
                    break 'epochs;
                }
            }
        }
        let acc = val_accuracy(&m, &val)?;
        history.push((epoch, loss_sum / fit.len() as f64, acc));
        if acc > best.0 {
            best = (acc, m.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (acc, m) = best;
    if acc < cfg.accuracy_floor {
        return Err(CoreError::AccuracyFloor {
            reached: acc,
            floor: cfg.accuracy_floor,
        });
    }
    Ok((
        m.freeze(),
        ClassifierReport {
            epochs_run,
            val_accuracy: acc,
            history,
        },
    ))
}

// ---------------------------------------------------------------------------
// Phase two: the explainer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerConfig {
    pub seed: u64,
    pub mode: AblationMode,
    pub epochs: usize,
    /// Exact number of steps; overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate decays linearly to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub neuron_fraction: f64,
    pub weights: LossWeights,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            mode: AblationMode::FullCause,
            epochs: 3,
            steps: None,
            batch_size: 16,
            lr: 1e-3,
            final_lr_fraction: 0.05,
            neuron_fraction: 0.2,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExplainerRun {
    pub explainer: Explainer,
    pub history: Vec<LossBreakdown>,
    pub coverage: CoverageLog,
}

/// Trains a fresh explainer (with `C₂` copied from `M`'s head) on the
/// filtered data. Deterministic given `cfg.seed`.
pub fn train_explainer(
    m: &FrozenClassifier,
    data: &[FilteredExample],
    lexicon: &LabelLexicon,
    eos: TokenId,
    cfg: &ExplainerConfig,
) -> Result<ExplainerRun> {
    train_explainer_with(m, data, lexicon, eos, cfg, |_, _| {})
}

/// [`train_explainer`] with a callback invoked after every step.
pub fn train_explainer_with(
    m: &FrozenClassifier,
    data: &[FilteredExample],
    lexicon: &LabelLexicon,
    eos: TokenId,
    cfg: &ExplainerConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<ExplainerRun> {
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(CoreError::Config("explainer training needs data and a positive batch size".into()));
    }
    let items = prepare_items(data, m, lexicon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut explainer = Explainer::new(m.dims(), m.head(), eos, &mut rng);
    let mut opt = ExplainerOptimizer::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let per_epoch = items.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.steps.unwrap_or(cfg.epochs * per_epoch);
    let mut history = Vec::with_capacity(total_steps);
    let mut coverage = CoverageLog::default();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut cursor = order.len();
    for step in 0..total_steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = order[cursor..end].to_vec();
        cursor = end;
        let plan = StepPlan::sample(&batch, explainer.c2.hidden_width(), cfg.neuron_fraction, &mut rng)?;
        coverage.record(step, &plan.coords);
        let progress = step as f64 / total_steps.max(1) as f64;
        let lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
        let b = explainer_step(&mut explainer, &mut opt, m.head(), &items, &plan, cfg.mode, &cfg.weights, lr)?;
        on_step(step, &b);
        history.push(b);
    }
    Ok(ExplainerRun {
        explainer,
        history,
        coverage,
    })
}

pub fn write_history_csv(history: &[LossBreakdown], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "step,l_phi,l_ts,l_iit,r_match,total")?;
    for (i, b) in history.iter().enumerate() {
        writeln!(w, "{i},{},{},{},{},{}", b.l_phi, b.l_ts, b.l_iit, b.r_match, b.total)?;
    }
    Ok(())
}

pub fn save_history_csv(history: &[LossBreakdown], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    write_history_csv(history, &mut f).map_err(|e| CoreError::io(path, e))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Explanations, extracted labels and `M`'s predictions on a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub m_predictions: Vec<usize>,
    pub explainer_labels: Vec<Option<usize>>,
    pub explanations: Vec<Vec<TokenId>>,
    pub macro_f1: f64,
}

/// Macro-F1 of the labels stated in generated explanations against `M`.
pub fn evaluate_simulation(
    m: &FrozenClassifier,
    explainer: &Explainer,
    inputs: &[MultimodalInput],
    lexicon: &LabelLexicon,
) -> Result<SimulationResult> {
    let mut m_predictions = Vec::with_capacity(inputs.len());
    let mut explainer_labels = Vec::with_capacity(inputs.len());
    let mut explanations = Vec::with_capacity(inputs.len());
    for z in inputs {
        let c: FusedRepresentation = m.encode(z)?;
        m_predictions.push(m.predict_rep(c.values())?);
        let seq = explainer.generate_explanation(&c, explainer.dims().max_len)?;
        explainer_labels.push(crate::ccmr::extract_label(&seq, lexicon));
        explanations.push(seq);
    }
    let f1 = macro_f1(&m_predictions, &explainer_labels);
    Ok(SimulationResult {
        m_predictions,
        explainer_labels,
        explanations,
        macro_f1: f1,
    })
}

/// Mean of `‖F(c) − c‖² / ‖c‖²` over the given representations.
pub fn identity_error(explainer: &Explainer, reps: &[Vec<f64>]) -> Result<f64> {
    if reps.is_empty() {
        return Err(CoreError::InvalidInput("no representations".into()));
    }
    let mut sum = 0.0;
    for c in reps {
        let f = explainer.pipeline(c)?;
        let num: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = c.iter().map(|v| v * v).sum();
        sum += num / den.max(1e-300);
    }
    Ok(sum / reps.len() as f64)
}
