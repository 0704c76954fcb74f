// SPDX-License-Identifier: MIT OR Apache-2.0

//! Eager tape: every op computes its value immediately and records how to
//! propagate gradients back to its inputs.

use std::collections::HashMap;

use crate::error::{GradError, Result};
use crate::loss::PROB_FLOOR;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(usize),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    SumVecs(Vec<Var>),
    MeanVecs(Vec<Var>),
    Row(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy(Var, usize),
    Kl { p: Var, q: Var, inv_ln_base: S },
    Frobenius(Vec<(Var, Var)>),
    Intervene(Var, Vec<usize>),
    Splice(Var, Var, Vec<usize>),
    SumAll(Var),
    WeightedSum(Vec<(Var, S)>),
    SqNorm(Var),
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Records a computation graph in topological order.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_keys: Vec<(String, String)>,
    param_cache: HashMap<(String, String), Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    params: HashMap<(String, String), Tensor<S>>,
    leaves: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn param(&self, namespace: &str, name: &str) -> Option<&Tensor<S>> {
        self.params.get(&(namespace.to_string(), name.to_string()))
    }

    /// Gradients of the parameters of `store` that took part in the loss.
    pub fn for_store(&self, store: &ParamStore<S>) -> HashMap<String, Tensor<S>> {
        self.params
            .iter()
            .filter(|((ns, _), _)| ns == store.namespace())
            .map(|((_, n), t)| (n.clone(), t.clone()))
            .collect()
    }

    /// Gradient with respect to a leaf created by [`Tape::variable`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.leaves.get(&v.0)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty() && self.leaves.is_empty()
    }
}

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> GradError {
    GradError::Shape {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_keys: Vec::new(),
            param_cache: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a parameter (e.g. a perturbation).
    pub fn variable(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for `store[name]`; frozen stores yield constants. Repeated
    /// calls return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Result<Var> {
        let key = (store.namespace().to_string(), name.to_string());
        if let Some(&v) = self.param_cache.get(&key) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = if store.is_frozen() {
            self.push(t, Op::Leaf, false)
        } else {
            self.param_keys.push(key.clone());
            self.push(t, Op::Param(self.param_keys.len() - 1), true)
        };
        self.param_cache.insert(key, v);
        Ok(v)
    }

    /// `w · x` for `w: [rows, cols]`, `x: [cols]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.value(w).shape();
        let xs = self.value(x).shape();
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(shape_err("matvec", ws, xs));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let wd = self.data(w);
        let xd = self.data(x);
        let out: Vec<S> = (0..rows)
            .map(|r| {
                wd[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xd)
                    .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        let g = self.needs(w) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), g))
    }

    /// `w · x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let y = self.matvec(w, x)?;
        self.add(y, b)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let shape = sa.to_vec();
        let out: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let v = self.value(a).map(|x| x * s);
        let g = self.needs(a);
        self.push(v, Op::Scale(a, s), g)
    }

    fn unary(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let v = self.value(a).map(f);
        let g = self.needs(a);
        self.push(v, op, g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(S::zero()), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, S::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| S::one() / (S::one() + (-x).exp()), Op::Sigmoid(a))
    }

    fn check_vectors(&self, vs: &[Var], op: &'static str) -> Result<()> {
        for &v in vs {
            let s = self.value(v).shape();
            if s.len() != 1 {
                return Err(shape_err(op, &[s.iter().product()], s));
            }
        }
        Ok(())
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_vectors(parts, "concat")?;
        let out: Vec<S> = parts
            .iter()
            .flat_map(|&p| self.data(p).iter().copied())
            .collect();
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), g))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check_vectors(&[a], "slice")?;
        let n = self.value(a).len();
        if start + len > n {
            return Err(GradError::Index {
                index: start + len,
                len: n,
            });
        }
        let out = self.data(a)[start..start + len].to_vec();
        let g = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::Slice(a, start), g))
    }

    fn fold_vectors(&mut self, parts: &[Var], op: &'static str) -> Result<Vec<S>> {
        if parts.is_empty() {
            return Err(GradError::Shape {
                op,
                expected: vec![1],
                got: vec![0],
            });
        }
        let shape = self.value(parts[0]).shape().to_vec();
        let mut acc = vec![S::zero(); self.value(parts[0]).len()];
        for &p in parts {
            if self.value(p).shape() != shape.as_slice() {
                return Err(shape_err(op, &shape, self.value(p).shape()));
            }
            for (a, &x) in acc.iter_mut().zip(self.data(p)) {
                *a += x;
            }
        }
        Ok(acc)
    }

    /// Element-wise sum of equally shaped tensors.
    pub fn sum_vecs(&mut self, parts: &[Var]) -> Result<Var> {
        let acc = self.fold_vectors(parts, "sum_vecs")?;
        let shape = self.value(parts[0]).shape().to_vec();
        let g = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, acc)?, Op::SumVecs(parts.to_vec()), g))
    }

    /// Element-wise mean of equally shaped tensors.
    pub fn mean_vecs(&mut self, parts: &[Var]) -> Result<Var> {
        let acc = self.fold_vectors(parts, "mean_vecs")?;
        let n = S::from_usize(parts.len()).unwrap_or_else(S::one);
        let shape = self.value(parts[0]).shape().to_vec();
        let g = parts.iter().any(|&p| self.needs(p));
        let data = acc.into_iter().map(|x| x / n).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::MeanVecs(parts.to_vec()), g))
    }

    /// Row `idx` of a `[rows, cols]` table (embedding lookup).
    pub fn row(&mut self, table: Var, idx: usize) -> Result<Var> {
        let s = self.value(table).shape();
        if s.len() != 2 {
            return Err(shape_err("row", &[0, 0], s));
        }
        if idx >= s[0] {
            return Err(GradError::Index {
                index: idx,
                len: s[0],
            });
        }
        let out = self.value(table).row(idx).to_vec();
        let g = self.needs(table);
        Ok(self.push(Tensor::vector(out), Op::Row(table, idx), g))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_vectors(&[a], "softmax")?;
        let out = tensor::softmax(self.data(a));
        let g = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::Softmax(a), g))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.check_vectors(&[a], "log_softmax")?;
        let out = tensor::log_softmax(self.data(a));
        let g = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::LogSoftmax(a), g))
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.check_vectors(&[logits], "cross_entropy")?;
        let n = self.value(logits).len();
        if target >= n {
            return Err(GradError::Index { index: target, len: n });
        }
        let lp = tensor::log_softmax(self.data(logits));
        let g = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(-lp[target]),
            Op::CrossEntropy(logits, target),
            g,
        ))
    }

    /// `Σ p log(p / max(q, floor))` in the requested base.
    pub fn kl(&mut self, p: Var, q: Var, base: crate::loss::LogBase) -> Result<Var> {
        let (sp, sq) = (self.value(p).shape(), self.value(q).shape());
        if sp != sq || sp.len() != 1 {
            return Err(shape_err("kl", sp, sq));
        }
        let inv_ln_base = S::one() / base.ln_base::<S>();
        let value = crate::loss::kl_raw(self.data(p), self.data(q)) * inv_ln_base;
        let g = self.needs(p) || self.needs(q);
        Ok(self.push(Tensor::scalar(value), Op::Kl { p, q, inv_ln_base }, g))
    }

    /// Frobenius norm of the difference across all tensor pairs.
    pub fn frobenius(&mut self, pairs: &[(Var, Var)]) -> Result<Var> {
        let mut acc = S::zero();
        for &(a, b) in pairs {
            let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
            if sa != sb {
                return Err(shape_err("frobenius", sa, sb));
            }
            for (&x, &y) in self.data(a).iter().zip(self.data(b)) {
                acc += (x - y) * (x - y);
            }
        }
        let g = pairs.iter().any(|&(a, b)| self.needs(a) || self.needs(b));
        Ok(self.push(
            Tensor::scalar(acc.sqrt()),
            Op::Frobenius(pairs.to_vec()),
            g,
        ))
    }

    /// Replaces selected elements of a vector with frozen constants.
    ///
    /// Overridden elements pass no gradient back into `a`. An empty override
    /// list returns `a` itself, so hook-free and empty-hook runs coincide.
    pub fn intervene(&mut self, a: Var, overrides: &[(usize, S)]) -> Result<Var> {
        if overrides.is_empty() {
            return Ok(a);
        }
        self.check_vectors(&[a], "intervene")?;
        let width = self.value(a).len();
        let mut out = self.data(a).to_vec();
        let mut idx = Vec::with_capacity(overrides.len());
        for &(neuron, value) in overrides {
            if neuron >= width {
                return Err(GradError::HookOutOfRange { neuron, width });
            }
            out[neuron] = value;
            idx.push(neuron);
        }
        let g = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::Intervene(a, idx), g))
    }

    /// Copy of `a` whose elements at `idx` are taken from `donor`.
    ///
    /// Unlike [`Tape::intervene`], the replaced elements stay on the graph:
    /// their gradient flows into `donor`.
    pub fn splice(&mut self, a: Var, donor: Var, idx: &[usize]) -> Result<Var> {
        self.check_vectors(&[a, donor], "splice")?;
        let width = self.value(a).len();
        if self.value(donor).len() != width {
            return Err(shape_err("splice", &[width], self.value(donor).shape()));
        }
        if idx.is_empty() {
            return Ok(a);
        }
        let mut out = self.data(a).to_vec();
        let src = self.data(donor);
        for &k in idx {
            if k >= width {
                return Err(GradError::HookOutOfRange { neuron: k, width });
            }
            out[k] = src[k];
        }
        let g = self.needs(a) || self.needs(donor);
        Ok(self.push(Tensor::vector(out), Op::Splice(a, donor, idx.to_vec()), g))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: S = self.data(a).iter().copied().sum();
        let g = self.needs(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), g)
    }

    /// `Σ w_i · x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, S)]) -> Result<Var> {
        let mut acc = S::zero();
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(shape_err("weighted_sum", &[], self.value(v).shape()));
            }
            acc += w * self.value(v).item();
        }
        let g = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSum(terms.to_vec()), g))
    }

    pub fn sq_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).sq_norm();
        let g = self.needs(a);
        self.push(Tensor::scalar(s), Op::SqNorm(a), g)
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let n = self.value(a).len();
        if i >= n {
            return Err(GradError::Index { index: i, len: n });
        }
        let v = self.data(a)[i];
        let g = self.needs(a);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, i), g))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let shape = self.value(loss).shape();
        if self.value(loss).len() != 1 {
            return Err(GradError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![S::one()]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.leaves
                        .insert(i, Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(k) => {
                    out.params.insert(
                        self.param_keys[*k].clone(),
                        Tensor::new(node.value.shape().to_vec(), g)?,
                    );
                }
                Op::MatVec(w, x) => {
                    let ws = self.value(*w).shape();
                    let cols = ws[1];
                    if self.needs(*w) {
                        let xd = self.data(*x);
                        self.acc_with(&mut grads, *w, |gw| {
                            for (r, &gr) in g.iter().enumerate() {
                                if gr == S::zero() {
                                    continue;
                                }
                                for (dst, &xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xd) {
                                    *dst += gr * xv;
                                }
                            }
                        });
                    }
                    if self.needs(*x) {
                        let wd = self.data(*w);
                        self.acc_with(&mut grads, *x, |gx| {
                            for (r, &gr) in g.iter().enumerate() {
                                if gr == S::zero() {
                                    continue;
                                }
                                for (dst, &wv) in gx.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                                    *dst += gr * wv;
                                }
                            }
                        });
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g, |_, gv| gv);
                    self.acc(&mut grads, *b, &g, |_, gv| gv);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &g, |_, gv| gv);
                    self.acc(&mut grads, *b, &g, |_, gv| -gv);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    self.acc(&mut grads, *a, &g, |k, gv| gv * bd[k]);
                    self.acc(&mut grads, *b, &g, |k, gv| gv * ad[k]);
                }
                Op::Scale(a, s) => self.acc(&mut grads, *a, &g, |_, gv| gv * *s),
                Op::Relu(a) => {
                    let y = node.value.data();
                    self.acc(&mut grads, *a, &g, |k, gv| {
                        if y[k] > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    self.acc(&mut grads, *a, &g, |k, gv| gv * (S::one() - y[k] * y[k]));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    self.acc(&mut grads, *a, &g, |k, gv| gv * y[k] * (S::one() - y[k]));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let slice = &g[off..off + n];
                        self.acc(&mut grads, p, slice, |_, gv| gv);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let start = *start;
                    self.acc_with(&mut grads, *a, |ga| {
                        for (k, &gv) in g.iter().enumerate() {
                            ga[start + k] += gv;
                        }
                    });
                }
                Op::SumVecs(parts) => {
                    for &p in parts {
                        self.acc(&mut grads, p, &g, |_, gv| gv);
                    }
                }
                Op::MeanVecs(parts) => {
                    let n = S::from_usize(parts.len()).unwrap_or_else(S::one);
                    for &p in parts {
                        self.acc(&mut grads, p, &g, |_, gv| gv / n);
                    }
                }
                Op::Row(table, idx) => {
                    let cols = self.value(*table).shape()[1];
                    let idx = *idx;
                    self.acc_with(&mut grads, *table, |gt| {
                        for (dst, &gv) in gt[idx * cols..(idx + 1) * cols].iter_mut().zip(&g) {
                            *dst += gv;
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: S = g.iter().zip(y).map(|(&gv, &yv)| gv * yv).sum();
                    self.acc(&mut grads, *a, &g, |k, gv| y[k] * (gv - dot));
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let total: S = g.iter().copied().sum();
                    self.acc(&mut grads, *a, &g, |k, gv| gv - y[k].exp() * total);
                }
                Op::CrossEntropy(logits, target) => {
                    let p = tensor::softmax(self.data(*logits));
                    let gs = g[0];
                    let t = *target;
                    self.acc_with(&mut grads, *logits, |gl| {
                        for (k, dst) in gl.iter_mut().enumerate() {
                            let onehot = if k == t { S::one() } else { S::zero() };
                            *dst += gs * (p[k] - onehot);
                        }
                    });
                }
                Op::Kl { p, q, inv_ln_base } => {
                    let floor = S::lit(PROB_FLOOR);
                    let (pd, qd) = (self.data(*p), self.data(*q));
                    let gs = g[0] * *inv_ln_base;
                    if self.needs(*p) {
                        self.acc_with(&mut grads, *p, |gp| {
                            for k in 0..gp.len() {
                                let pk = pd[k].max(floor);
                                gp[k] += gs * (pk.ln() - qd[k].max(floor).ln() + S::one());
                            }
                        });
                    }
                    if self.needs(*q) {
                        self.acc_with(&mut grads, *q, |gq| {
                            for k in 0..gq.len() {
                                if qd[k] > floor {
                                    gq[k] -= gs * pd[k] / qd[k];
                                }
                            }
                        });
                    }
                }
                Op::Frobenius(pairs) => {
                    let d = node.value.item();
                    if d > S::zero() {
                        let gs = g[0] / d;
                        for &(a, b) in pairs {
                            let (ad, bd) = (self.data(a), self.data(b));
                            let diff: Vec<S> =
                                ad.iter().zip(bd).map(|(&x, &y)| gs * (x - y)).collect();
                            self.acc(&mut grads, a, &diff, |_, gv| gv);
                            self.acc(&mut grads, b, &diff, |_, gv| -gv);
                        }
                    }
                }
                Op::Intervene(a, idx) => {
                    let mut masked = g.clone();
                    for &k in idx {
                        masked[k] = S::zero();
                    }
                    self.acc(&mut grads, *a, &masked, |_, gv| gv);
                }
                Op::Splice(a, donor, idx) => {
                    let mut from_a = g.clone();
                    let mut from_donor = vec![S::zero(); g.len()];
                    for &k in idx {
                        from_a[k] = S::zero();
                        from_donor[k] = g[k];
                    }
                    self.acc(&mut grads, *a, &from_a, |_, gv| gv);
                    self.acc(&mut grads, *donor, &from_donor, |_, gv| gv);
                }
                Op::SumAll(a) => {
                    let gs = g[0];
                    self.acc_with(&mut grads, *a, |ga| {
                        for dst in ga.iter_mut() {
                            *dst += gs;
                        }
                    });
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        self.acc(&mut grads, v, &g, |_, gv| gv * w);
                    }
                }
                Op::SqNorm(a) => {
                    let ad = self.data(*a);
                    let two = S::lit(2.0);
                    let gs = g[0];
                    self.acc_with(&mut grads, *a, |ga| {
                        for (dst, &x) in ga.iter_mut().zip(ad) {
                            *dst += two * gs * x;
                        }
                    });
                }
                Op::Pick(a, i) => {
                    let (gs, i) = (g[0], *i);
                    self.acc_with(&mut grads, *a, |ga| ga[i] += gs);
                }
            }
        }
        Ok(out)
    }

    fn acc_with(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); self.value(v).len()]);
        f(slot);
    }

    fn acc(&self, grads: &mut [Option<Vec<S>>], v: Var, g: &[S], f: impl Fn(usize, S) -> S) {
        self.acc_with(grads, v, |dst| {
            for (k, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                *d += f(k, gv);
            }
        });
    }
}
