// SPDX-License-Identifier: MIT OR Apache-2.0

//! The frozen classifier `M = C₁ ∘ E` and the explainer `(ψ, φ, 𝒜, C₂)`.
//!
//! All models are parameter stores plus functions that record their forward
//! pass on a [`Tape`]. Convenience methods that return plain values build a
//! private tape per call.

use gradcore::tensor::argmax;
use gradcore::{Checkpoint, Coord, InterventionSpec, ProbVector, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::synthdata::{MultimodalInput, TaskSpec, TokenId};
use crate::{Params, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub vocab: usize,
    pub v_dim: usize,
    pub classes: usize,
    pub text_embed: usize,
    pub encoder_hidden: usize,
    /// Width `m` of the fused representation.
    pub m: usize,
    pub head_hidden: usize,
    pub lm_embed: usize,
    pub lm_hidden: usize,
    pub psi_hidden: usize,
    pub agg_hidden: usize,
    /// Generation length cap (tokens after BOS).
    pub max_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            vocab: 41,
            v_dim: 12,
            classes: 3,
            text_embed: 16,
            encoder_hidden: 64,
            m: 32,
            head_hidden: 32,
            lm_embed: 32,
            lm_hidden: 64,
            psi_hidden: 64,
            agg_hidden: 64,
            max_len: 10,
        }
    }
}

impl ModelDims {
    /// Defaults with vocabulary, feature and class widths taken from `spec`.
    pub fn for_task(spec: &TaskSpec) -> Result<Self> {
        Ok(Self {
            vocab: spec.vocab()?.len(),
            v_dim: spec.v_dim(),
            classes: spec.num_labels(),
            ..Self::default()
        })
    }
}

/// `c = E(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation(pub Vec<f64>);

impl FusedRepresentation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

fn init_dense(p: &mut Params, name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) {
    p.insert(format!("{name}.w"), glorot(rng, out, inp));
    p.insert(format!("{name}.b"), Tensor::zeros(&[out]));
}

fn dense(t: &mut Tape, p: &Params, w: &str, b: &str, x: Var) -> Result<Var> {
    let w = t.param(p, w)?;
    let b = t.param(p, b)?;
    Ok(t.affine(w, x, b)?)
}

fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(CoreError::InvalidInput(format!(
            "{what} has width {got}, expected {want}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// `E`: mean-pooled token embeddings concatenated with the visual features,
/// then two dense layers (ReLU, tanh).
#[derive(Debug, Clone)]
pub struct Encoder {
    pub params: Params,
    dims: ModelDims,
}

impl Encoder {
    pub fn new(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Params::new("encoder");
        p.insert("embed", glorot(rng, dims.vocab, dims.text_embed));
        init_dense(&mut p, "l1", dims.encoder_hidden, dims.text_embed + dims.v_dim, rng);
        init_dense(&mut p, "l2", dims.m, dims.encoder_hidden, rng);
        Self { params: p, dims }
    }

    fn validate(&self, z: &MultimodalInput) -> Result<()> {
        if z.text_tokens.is_empty() {
            return Err(CoreError::InvalidInput("empty text".into()));
        }
        if let Some(&bad) = z.text_tokens.iter().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(CoreError::InvalidInput(format!(
                "token id {bad} outside vocabulary of {}",
                self.dims.vocab
            )));
        }
        check_width("visual features", z.visual_features.len(), self.dims.v_dim)
    }

    pub fn forward(&self, t: &mut Tape, z: &MultimodalInput) -> Result<Var> {
        self.validate(z)?;
        let table = t.param(&self.params, "embed")?;
        let rows = z
            .text_tokens
            .iter()
            .map(|&tok| t.row(table, tok as usize))
            .collect::<gradcore::Result<Vec<_>>>()?;
        let pooled = t.mean_vecs(&rows)?;
        let visual = t.input(Tensor::vector(z.visual_features.clone()));
        let x = t.concat(&[pooled, visual])?;
        let h = dense(t, &self.params, "l1.w", "l1.b", x)?;
        let h = t.relu(h);
        let c = dense(t, &self.params, "l2.w", "l2.b", h)?;
        Ok(t.tanh(c))
    }

    /// Mean-pooled text embedding followed by the visual features; the input
    /// space in which counterfactual neighbours are searched.
    pub fn input_representation(&self, z: &MultimodalInput) -> Result<Vec<f64>> {
        self.validate(z)?;
        let table = self.params.get("embed")?;
        let mut pooled = vec![0.0; self.dims.text_embed];
        for &tok in &z.text_tokens {
            for (acc, &v) in pooled.iter_mut().zip(table.row(tok as usize)) {
                *acc += v;
            }
        }
        let n = z.text_tokens.len() as f64;
        let mut out: Vec<f64> = pooled.into_iter().map(|v| v / n).collect();
        out.extend_from_slice(&z.visual_features);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Classifier head (C₁ and its replica C₂)
// ---------------------------------------------------------------------------

/// Id of the only hookable layer of a head: its post-ReLU hidden layer.
pub const HIDDEN_LAYER: usize = 0;

/// Two dense layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub params: Params,
    dims: ModelDims,
}

/// Nodes produced by one head pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadPass {
    pub hidden: Var,
    pub logits: Var,
}

impl ClassifierHead {
    pub fn new(namespace: &str, dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Params::new(namespace);
        init_dense(&mut p, "l1", dims.head_hidden, dims.m, rng);
        init_dense(&mut p, "l2", dims.classes, dims.head_hidden, rng);
        Self { params: p, dims }
    }

    /// Structurally identical copy with the same weights under `namespace`.
    pub fn replica(&self, namespace: &str) -> Self {
        Self {
            params: self.params.renamed(namespace),
            dims: self.dims,
        }
    }

    pub fn from_params(params: Params, dims: ModelDims) -> Self {
        Self { params, dims }
    }

    pub fn hidden_width(&self) -> usize {
        self.dims.head_hidden
    }

    /// Width of every hookable layer, indexed by layer id.
    pub fn hook_widths(&self) -> [usize; 1] {
        [self.dims.head_hidden]
    }

    pub fn num_classes(&self) -> usize {
        self.dims.classes
    }

    pub fn forward(&self, t: &mut Tape, c: Var, hooks: &InterventionSpec<f64>) -> Result<HeadPass> {
        check_width("head input", t.value(c).len(), self.dims.m)?;
        hooks.validate(&self.hook_widths())?;
        let h = dense(t, &self.params, "l1.w", "l1.b", c)?;
        let h = t.relu(h);
        let hidden = t.intervene(h, &hooks.for_layer(HIDDEN_LAYER))?;
        let logits = dense(t, &self.params, "l2.w", "l2.b", hidden)?;
        Ok(HeadPass { hidden, logits })
    }

    /// Forward pass whose hidden neurons at `coords` are taken from `donor`,
    /// the hidden layer of another pass on the same tape. Gradients reach both
    /// passes.
    pub fn forward_interchanged(&self, t: &mut Tape, c: Var, donor: Var, coords: &[Coord]) -> Result<HeadPass> {
        check_width("head input", t.value(c).len(), self.dims.m)?;
        if let Some(bad) = coords.iter().find(|co| co.layer != HIDDEN_LAYER) {
            return Err(CoreError::InvalidInput(format!("head has no hookable layer {}", bad.layer)));
        }
        let h = dense(t, &self.params, "l1.w", "l1.b", c)?;
        let h = t.relu(h);
        let idx: Vec<usize> = coords.iter().map(|co| co.neuron).collect();
        let hidden = t.splice(h, donor, &idx)?;
        let logits = dense(t, &self.params, "l2.w", "l2.b", hidden)?;
        Ok(HeadPass { hidden, logits })
    }

    /// Hidden activations and logits for a plain input vector.
    pub fn run(&self, c: &[f64], hooks: &InterventionSpec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(c.to_vec()));
        let pass = self.forward(&mut t, x, hooks)?;
        Ok((
            t.value(pass.hidden).data().to_vec(),
            t.value(pass.logits).data().to_vec(),
        ))
    }
}

/// Softmax of the head's logits, with `hooks` applied to its hidden layer.
pub fn classify(
    head: &ClassifierHead,
    c: &FusedRepresentation,
    hooks: &InterventionSpec<f64>,
) -> Result<ProbVector<f64>> {
    let (_, logits) = head.run(c.values(), hooks)?;
    Ok(ProbVector::from_logits(&logits)?)
}

// ---------------------------------------------------------------------------
// The classifier M
// ---------------------------------------------------------------------------

/// `M = C₁ ∘ E` while it is still being trained.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: ClassifierHead,
    dims: ModelDims,
}

impl Classifier {
    pub fn new(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        Self {
            encoder: Encoder::new(dims, rng),
            head: ClassifierHead::new("c1", dims, rng),
            dims,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// Fails: representations for the explainer come only from a frozen `M`.
    pub fn encode(&self, _z: &MultimodalInput) -> Result<FusedRepresentation> {
        Err(CoreError::NotFrozen)
    }

    /// Logits on a tape, for training.
    pub fn forward(&self, t: &mut Tape, z: &MultimodalInput) -> Result<Var> {
        let c = self.encoder.forward(t, z)?;
        Ok(self.head.forward(t, c, &InterventionSpec::empty())?.logits)
    }

    pub fn freeze(mut self) -> FrozenClassifier {
        self.encoder.params.freeze();
        self.head.params.freeze();
        FrozenClassifier {
            encoder: self.encoder,
            head: self.head,
            dims: self.dims,
        }
    }
}

/// `M` after training; its parameters can no longer change.
#[derive(Debug, Clone)]
pub struct FrozenClassifier {
    encoder: Encoder,
    head: ClassifierHead,
    dims: ModelDims,
}

impl FrozenClassifier {
    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// `C₁`.
    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn encode(&self, z: &MultimodalInput) -> Result<FusedRepresentation> {
        let mut t = Tape::new();
        let c = self.encoder.forward(&mut t, z)?;
        Ok(FusedRepresentation(t.value(c).data().to_vec()))
    }

    pub fn classify(&self, c: &FusedRepresentation, hooks: &InterventionSpec<f64>) -> Result<ProbVector<f64>> {
        classify(&self.head, c, hooks)
    }

    /// `argmax C₁(E(z))`.
    pub fn predict(&self, z: &MultimodalInput) -> Result<usize> {
        let c = self.encode(z)?;
        let (_, logits) = self.head.run(c.values(), &InterventionSpec::empty())?;
        Ok(argmax(&logits))
    }

    pub fn predict_rep(&self, c: &[f64]) -> Result<usize> {
        let (_, logits) = self.head.run(c, &InterventionSpec::empty())?;
        Ok(argmax(&logits))
    }

    pub fn fingerprint(&self) -> u64 {
        self.encoder.params.fingerprint() ^ self.head.params.fingerprint().rotate_left(1)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_store(&self.encoder.params);
        ck.add_store(&self.head.params);
        ck
    }

    pub fn from_checkpoint(dims: ModelDims, ck: &Checkpoint) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Classifier::new(dims, &mut rng);
        ck.restore_store(&mut m.encoder.params)?;
        ck.restore_store(&mut m.head.params)?;
        Ok(m.freeze())
    }
}

// ---------------------------------------------------------------------------
// Explainer
// ---------------------------------------------------------------------------

const GRU_NAMES: [[&str; 4]; 2] = [
    ["gru0.wx", "gru0.wh", "gru0.bx", "gru0.bh"],
    ["gru1.wx", "gru1.wh", "gru1.bx", "gru1.bh"],
];

/// `ψ` (projection of `c` onto the BOS embedding) and `φ` (a two-layer GRU
/// decoder with token embeddings and a vocabulary projection).
#[derive(Debug, Clone)]
pub struct ExplanationModel {
    pub psi: Params,
    pub phi: Params,
    dims: ModelDims,
    eos: TokenId,
}

impl ExplanationModel {
    pub fn new(dims: ModelDims, eos: TokenId, rng: &mut ChaCha8Rng) -> Self {
        let mut psi = Params::new("psi");
        init_dense(&mut psi, "l1", dims.psi_hidden, dims.m, rng);
        init_dense(&mut psi, "l2", dims.lm_embed, dims.psi_hidden, rng);
        let mut phi = Params::new("phi");
        phi.insert("embed", glorot(rng, dims.vocab, dims.lm_embed));
        let h = dims.lm_hidden;
        for (layer, names) in GRU_NAMES.iter().enumerate() {
            let inp = if layer == 0 { dims.lm_embed } else { h };
            phi.insert(names[0], glorot(rng, 3 * h, inp));
            phi.insert(names[1], glorot(rng, 3 * h, h));
            phi.insert(names[2], Tensor::zeros(&[3 * h]));
            phi.insert(names[3], Tensor::zeros(&[3 * h]));
        }
        init_dense(&mut phi, "out", dims.vocab, h, rng);
        Self {
            psi,
            phi,
            dims,
            eos,
        }
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    /// `ψ(c)`.
    pub fn project(&self, t: &mut Tape, c: Var) -> Result<Var> {
        check_width("representation", t.value(c).len(), self.dims.m)?;
        let h = dense(t, &self.psi, "l1.w", "l1.b", c)?;
        let h = t.tanh(h);
        dense(t, &self.psi, "l2.w", "l2.b", h)
    }

    fn embed(&self, t: &mut Tape, tok: TokenId) -> Result<Var> {
        if tok as usize >= self.dims.vocab {
            return Err(CoreError::InvalidInput(format!("token {tok} outside vocabulary")));
        }
        let table = t.param(&self.phi, "embed")?;
        Ok(t.row(table, tok as usize)?)
    }

    fn gru(&self, t: &mut Tape, layer: usize, x: Var, h: Var) -> Result<Var> {
        let n = self.dims.lm_hidden;
        let [wx, wh, bx, bh] = GRU_NAMES[layer];
        let gx = dense(t, &self.phi, wx, bx, x)?;
        let gh = dense(t, &self.phi, wh, bh, h)?;
        let (xr, xz, xn) = (t.slice(gx, 0, n)?, t.slice(gx, n, n)?, t.slice(gx, 2 * n, n)?);
        let (hr, hz, hn) = (t.slice(gh, 0, n)?, t.slice(gh, n, n)?, t.slice(gh, 2 * n, n)?);
        let r = t.add(xr, hr)?;
        let r = t.sigmoid(r);
        let z = t.add(xz, hz)?;
        let z = t.sigmoid(z);
        let rn = t.mul(r, hn)?;
        let cand = t.add(xn, rn)?;
        let cand = t.tanh(cand);
        // h' = (1 - z) ⊙ n + z ⊙ h
        let d = t.sub(h, cand)?;
        let zd = t.mul(z, d)?;
        Ok(t.add(cand, zd)?)
    }

    /// One decoder step; updates `state` and returns vocabulary logits.
    fn step(&self, t: &mut Tape, x: Var, state: &mut [Var; 2]) -> Result<Var> {
        state[0] = self.gru(t, 0, x, state[0])?;
        state[1] = self.gru(t, 1, state[0], state[1])?;
        dense(t, &self.phi, "out.w", "out.b", state[1])
    }

    fn initial_state(&self, t: &mut Tape) -> [Var; 2] {
        let z = t.input(Tensor::zeros(&[self.dims.lm_hidden]));
        [z, z]
    }

    /// Logits at every position under teacher forcing: position 0 consumes
    /// `ψ(c)`, position `k` consumes the embedding of `target[k-1]`.
    pub fn teacher_forced(&self, t: &mut Tape, c: Var, target: &[TokenId]) -> Result<Vec<Var>> {
        let mut x = self.project(t, c)?;
        let mut state = self.initial_state(t);
        let mut out = Vec::with_capacity(target.len());
        for (k, &tok) in target.iter().enumerate() {
            out.push(self.step(t, x, &mut state)?);
            if k + 1 < target.len() {
                x = self.embed(t, tok)?;
            }
        }
        Ok(out)
    }

    /// `-Σ log P(xᵢ | x<ᵢ)` on the tape.
    pub fn lm_loss(&self, t: &mut Tape, c: Var, target: &[TokenId]) -> Result<Var> {
        if target.is_empty() {
            return Err(CoreError::InvalidInput("empty target sequence".into()));
        }
        let logits = self.teacher_forced(t, c, target)?;
        let terms = logits
            .iter()
            .zip(target)
            .map(|(&l, &tok)| t.cross_entropy(l, tok as usize).map(|v| (v, 1.0)))
            .collect::<gradcore::Result<Vec<_>>>()?;
        Ok(t.weighted_sum(&terms)?)
    }

    /// Greedy decoding from `ψ(c)`; stops after EOS or `max_len` tokens.
    /// Returns the per-step logits and the chosen tokens.
    pub fn rollout(&self, t: &mut Tape, c: Var, max_len: usize) -> Result<(Vec<Var>, Vec<TokenId>)> {
        let mut x = self.project(t, c)?;
        let mut state = self.initial_state(t);
        let mut logits = Vec::new();
        let mut tokens = Vec::new();
        while tokens.len() < max_len {
            let l = self.step(t, x, &mut state)?;
            let tok = argmax(t.value(l).data()) as TokenId;
            logits.push(l);
            tokens.push(tok);
            if tok == self.eos {
                break;
            }
            x = self.embed(t, tok)?;
        }
        Ok((logits, tokens))
    }
}

/// `𝒜`: sums φ's logits over time, then a two-layer feed-forward map `ℝ^V → ℝ^m`.
#[derive(Debug, Clone)]
pub struct Aggregator {
    pub params: Params,
    dims: ModelDims,
}

impl Aggregator {
    pub fn new(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Params::new("agg");
        init_dense(&mut p, "l1", dims.agg_hidden, dims.vocab, rng);
        init_dense(&mut p, "l2", dims.m, dims.agg_hidden, rng);
        Self { params: p, dims }
    }

    pub fn forward(&self, t: &mut Tape, logits: &[Var]) -> Result<Var> {
        if logits.is_empty() {
            return Err(CoreError::InvalidInput("aggregator needs at least one time step".into()));
        }
        for &l in logits {
            check_width("aggregator input", t.value(l).len(), self.dims.vocab)?;
        }
        let x = t.sum_vecs(logits)?;
        let h = dense(t, &self.params, "l1.w", "l1.b", x)?;
        let h = t.relu(h);
        let out = dense(t, &self.params, "l2.w", "l2.b", h)?;
        Ok(t.tanh(out))
    }
}

/// `C₂ ∘ 𝒜 ∘ φ ∘ ψ`.
#[derive(Debug, Clone)]
pub struct Explainer {
    pub lm: ExplanationModel,
    pub aggregator: Aggregator,
    pub c2: ClassifierHead,
    dims: ModelDims,
}

impl Explainer {
    /// Fresh explainer whose `C₂` starts as an exact copy of `c1`.
    pub fn new(dims: ModelDims, c1: &ClassifierHead, eos: TokenId, rng: &mut ChaCha8Rng) -> Self {
        Self {
            lm: ExplanationModel::new(dims, eos, rng),
            aggregator: Aggregator::new(dims, rng),
            c2: c1.replica("c2"),
            dims,
        }
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// `F(c) = 𝒜(Σₜ φ-logits)` over the greedy rollout from `ψ(c)`.
    pub fn pipeline_on_tape(&self, t: &mut Tape, c: Var) -> Result<Var> {
        let (logits, _) = self.lm.rollout(t, c, self.dims.max_len)?;
        self.aggregator.forward(t, &logits)
    }

    pub fn pipeline(&self, c: &[f64]) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(c.to_vec()));
        let f = self.pipeline_on_tape(&mut t, x)?;
        Ok(t.value(f).data().to_vec())
    }

    pub fn generate_explanation(&self, c: &FusedRepresentation, max_len: usize) -> Result<Vec<TokenId>> {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(c.values().to_vec()));
        let (_, tokens) = self.lm.rollout(&mut t, x, max_len)?;
        Ok(tokens)
    }

    pub fn lm_forward_loss(&self, c: &FusedRepresentation, target: &[TokenId]) -> Result<f64> {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(c.values().to_vec()));
        let l = self.lm.lm_loss(&mut t, x, target)?;
        Ok(t.value(l).item())
    }

    /// Teacher-forced logits as a `[T, V]` tensor.
    pub fn lm_logits(&self, c: &FusedRepresentation, target: &[TokenId]) -> Result<Tensor> {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(c.values().to_vec()));
        let ls = self.lm.teacher_forced(&mut t, x, target)?;
        let mut data = Vec::with_capacity(ls.len() * self.dims.vocab);
        for l in &ls {
            data.extend_from_slice(t.value(*l).data());
        }
        Ok(Tensor::new(vec![ls.len(), self.dims.vocab], data)?)
    }

    /// `y₂ = C₂(𝒜(logits))` for a `[T, V]` logit tensor.
    pub fn aggregate_and_classify(&self, logits: &Tensor) -> Result<ProbVector<f64>> {
        let s = logits.shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(CoreError::InvalidInput(format!(
                "expected [T, V] logits with T >= 1, got {s:?}"
            )));
        }
        check_width("logit rows", s[1], self.dims.vocab)?;
        let mut t = Tape::new();
        let rows: Vec<Var> = (0..s[0])
            .map(|r| t.input(Tensor::vector(logits.row(r).to_vec())))
            .collect();
        let a = self.aggregator.forward(&mut t, &rows)?;
        let pass = self.c2.forward(&mut t, a, &InterventionSpec::empty())?;
        Ok(ProbVector::from_logits(t.value(pass.logits).data())?)
    }

    /// Trainable stores, in a fixed order.
    pub fn stores(&self) -> [&Params; 4] {
        [&self.lm.psi, &self.lm.phi, &self.aggregator.params, &self.c2.params]
    }

    pub fn fingerprint(&self) -> u64 {
        [&self.lm.psi, &self.lm.phi, &self.aggregator.params, &self.c2.params]
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, p)| acc ^ p.fingerprint().rotate_left(i as u32 * 7))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_store(&self.lm.psi);
        ck.add_store(&self.lm.phi);
        ck.add_store(&self.aggregator.params);
        ck.add_store(&self.c2.params);
        ck
    }

    pub fn from_checkpoint(dims: ModelDims, eos: TokenId, ck: &Checkpoint) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let c1 = ClassifierHead::new("c1", dims, &mut rng);
        let mut e = Explainer::new(dims, &c1, eos, &mut rng);
        ck.restore_store(&mut e.lm.psi)?;
        ck.restore_store(&mut e.lm.phi)?;
        ck.restore_store(&mut e.aggregator.params)?;
        ck.restore_store(&mut e.c2.params)?;
        Ok(e)
    }
}
