// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic multimodal entailment task.
//!
//! A "scene" has observable attributes (color, shape, count) that are encoded
//! in the visual feature vector as noisy one-hot blocks, and unobservable ones
//! (material, size) that never appear in it. A hypothesis mentions exactly one
//! attribute value. The gold label follows from `(text, visual)`:
//!
//! * hypothesis value equals the scene's value → entailment
//! * hypothesis value differs from the scene's value → contradiction
//! * hypothesis names an unobservable attribute → neutral
//!
//! Ground-truth explanations are templated as `<label> because <reason> <eos>`.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type TokenId = u32;

pub const ENTAILMENT: usize = 0;
pub const CONTRADICTION: usize = 1;
pub const NEUTRAL: usize = 2;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Longest templated explanation, including the end token.
pub const MAX_EXPLANATION_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
    /// Hypothesis template; `{}` is replaced by the value.
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Attributes encoded in the visual features.
    pub visual: Vec<Attribute>,
    /// Attributes a hypothesis may mention but the scene never shows.
    pub unobservable: Vec<Attribute>,
    pub labels: Vec<String>,
    pub noise_std: f64,
    pub max_vocab: usize,
}

fn attr(name: &str, values: &[&str], template: &str) -> Attribute {
    Attribute {
        name: name.to_string(),
        values: values.iter().map(|v| v.to_string()).collect(),
        template: template.to_string(),
    }
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            visual: vec![
                attr("color", &["red", "blue", "green", "yellow"], "the object is {}"),
                attr("shape", &["circle", "square", "triangle", "star"], "the object is a {}"),
                attr("count", &["one", "two", "three", "four"], "there are {} objects"),
            ],
            unobservable: vec![
                attr("material", &["wooden", "metal", "glass", "plastic"], "the object is {}"),
                attr("size", &["big", "small", "tiny", "huge"], "the object is {}"),
            ],
            labels: vec!["entailment".into(), "contradiction".into(), "neutral".into()],
            noise_std: 0.25,
            max_vocab: 64,
        }
    }
}

const REASON_WORDS: [&str; 5] = ["because", "matches", "is", "not", "shown"];

impl TaskSpec {
    /// Width of the visual feature vector.
    pub fn v_dim(&self) -> usize {
        self.visual.iter().map(|a| a.values.len()).sum()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    fn all_attributes(&self) -> impl Iterator<Item = (&Attribute, bool)> {
        self.visual
            .iter()
            .map(|a| (a, true))
            .chain(self.unobservable.iter().map(|a| (a, false)))
    }

    /// Builds the vocabulary; fails if it exceeds `max_vocab` or if a value
    /// word is shared between attributes (the label rule needs them unique).
    pub fn vocab(&self) -> Result<Vocab> {
        if self.labels.len() != 3 {
            return Err(CoreError::Config(
                "the task has exactly three labels (entailment, contradiction, neutral)".into(),
            ));
        }
        let mut v = Vocab::default();
        v.push(BOS);
        v.push(EOS);
        for l in &self.labels {
            v.push(l);
        }
        for w in REASON_WORDS {
            v.push(w);
        }
        let mut owners: HashMap<&str, &str> = HashMap::new();
        for (a, _) in self.all_attributes() {
            v.push(&a.name);
            for w in a.template.split_whitespace().filter(|w| *w != "{}") {
                v.push(w);
            }
            for val in &a.values {
                if let Some(prev) = owners.insert(val, &a.name) {
                    return Err(CoreError::Config(format!(
                        "value `{val}` used by both `{prev}` and `{}`",
                        a.name
                    )));
                }
                v.push(val);
            }
        }
        if v.len() > self.max_vocab {
            return Err(CoreError::VocabOverflow {
                size: v.len(),
                limit: self.max_vocab,
            });
        }
        Ok(v)
    }
}

/// Token table; ids follow insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.tokens.len() as TokenId);
            self.tokens.push(w.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, w: &str) -> Option<TokenId> {
        self.index.get(w).copied()
    }

    fn must(&self, w: &str) -> TokenId {
        self.index[w]
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn bos(&self) -> TokenId {
        self.must(BOS)
    }

    pub fn eos(&self) -> TokenId {
        self.must(EOS)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| CoreError::InvalidInput(format!("unknown word `{w}`")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Maps each class to its label token.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelLexicon {
    tokens: Vec<TokenId>,
}

impl LabelLexicon {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self { tokens }
    }

    pub fn from_spec(spec: &TaskSpec, vocab: &Vocab) -> Self {
        Self {
            tokens: spec.labels.iter().map(|l| vocab.must(l)).collect(),
        }
    }

    pub fn token(&self, class: usize) -> TokenId {
        self.tokens[class]
    }

    pub fn class_of(&self, tok: TokenId) -> Option<usize> {
        self.tokens.iter().position(|&t| t == tok)
    }

    pub fn num_classes(&self) -> usize {
        self.tokens.len()
    }
}

/// The paired input `(text, visual)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalInput {
    pub text_tokens: Vec<TokenId>,
    pub visual_features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: MultimodalInput,
    pub gold_label: usize,
    pub explanation: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Why a hypothesis gets its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Reason {
    pub attribute: String,
    pub hypothesis_value: String,
    /// The scene's value, for observable attributes.
    pub visual_value: Option<String>,
}

/// `<label> because <reason> <eos>`.
///
/// * entailment: `because <attr> <value> matches`
/// * contradiction: `because <attr> is <scene value> not <hypothesis value>`
/// * neutral: `because <attr> is not shown`
pub fn templated_explanation(
    spec: &TaskSpec,
    vocab: &Vocab,
    label: usize,
    reason: &Reason,
) -> Result<Vec<TokenId>> {
    let head = spec
        .labels
        .get(label)
        .ok_or_else(|| CoreError::InvalidInput(format!("label {label} not in label set")))?;
    let mut words: Vec<&str> = vec![head, "because", &reason.attribute];
    match label {
        ENTAILMENT => words.extend([reason.hypothesis_value.as_str(), "matches"]),
        CONTRADICTION => {
            let seen = reason.visual_value.as_deref().unwrap_or("?");
            words.extend(["is", seen, "not", reason.hypothesis_value.as_str()]);
        }
        _ => words.extend(["is", "not", "shown"]),
    }
    words.push(EOS);
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        out.push(
            vocab
                .id(w)
                .ok_or_else(|| CoreError::InvalidInput(format!("unknown word `{w}`")))?,
        );
    }
    debug_assert!(out.len() <= MAX_EXPLANATION_LEN);
    Ok(out)
}

/// Applies the labelling rule to an input. Returns `None` when the text
/// mentions no attribute value.
pub fn derive_label(spec: &TaskSpec, vocab: &Vocab, input: &MultimodalInput) -> Option<usize> {
    for &tok in &input.text_tokens {
        let word = vocab.word(tok)?;
        let mut offset = 0;
        for a in &spec.visual {
            if let Some(pos) = a.values.iter().position(|v| v == word) {
                let block = &input.visual_features[offset..offset + a.values.len()];
                let seen = gradcore::tensor::argmax(block);
                return Some(if seen == pos { ENTAILMENT } else { CONTRADICTION });
            }
            offset += a.values.len();
        }
        if spec.unobservable.iter().any(|a| a.values.iter().any(|v| v == word)) {
            return Some(NEUTRAL);
        }
    }
    None
}

/// Minimum items per split.
pub const MIN_SPLIT: usize = 30;

pub fn generate_dataset(spec: &TaskSpec, n_train: usize, n_test: usize, seed: u64) -> Result<DatasetSplit> {
    if n_train < MIN_SPLIT || n_test < MIN_SPLIT {
        return Err(CoreError::Config(format!(
            "split sizes must be at least {MIN_SPLIT}, got {n_train}/{n_test}"
        )));
    }
    let vocab = spec.vocab()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| CoreError::Config(e.to_string()))?;
    let mut make = |n: usize| -> Result<Vec<Example>> {
        (0..n)
            .map(|_| sample_example(spec, &vocab, &mut rng, &noise))
            .collect()
    };
    let train = make(n_train)?;
    let test = make(n_test)?;
    Ok(DatasetSplit { train, test })
}

fn sample_example(
    spec: &TaskSpec,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
) -> Result<Example> {
    let scene: Vec<usize> = spec
        .visual
        .iter()
        .map(|a| rng.gen_range(0..a.values.len()))
        .collect();
    let mut visual_features = Vec::with_capacity(spec.v_dim());
    for (a, &v) in spec.visual.iter().zip(&scene) {
        for k in 0..a.values.len() {
            let hot = if k == v { 1.0 } else { 0.0 };
            visual_features.push(hot + noise.sample(rng));
        }
    }
    let label = rng.gen_range(0..3);
    let (attribute, value_idx, seen) = match label {
        ENTAILMENT | CONTRADICTION => {
            let ai = rng.gen_range(0..spec.visual.len());
            let a = &spec.visual[ai];
            let truth = scene[ai];
            let v = if label == ENTAILMENT {
                truth
            } else {
                let others: Vec<usize> = (0..a.values.len()).filter(|&k| k != truth).collect();
                *others.choose(rng).expect("attribute has at least two values")
            };
            (a, v, Some(truth))
        }
        _ => {
            let a = spec
                .unobservable
                .choose(rng)
                .ok_or_else(|| CoreError::Config("no unobservable attributes".into()))?;
            (a, rng.gen_range(0..a.values.len()), None)
        }
    };
    let hyp_value = &attribute.values[value_idx];
    let text = attribute.template.replace("{}", hyp_value);
    let reason = Reason {
        attribute: attribute.name.clone(),
        hypothesis_value: hyp_value.clone(),
        visual_value: seen.map(|s| attribute.values[s].clone()),
    };
    Ok(Example {
        input: MultimodalInput {
            text_tokens: vocab.encode(&text)?,
            visual_features,
        },
        gold_label: label,
        explanation: templated_explanation(spec, vocab, label, &reason)?,
    })
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub split: String,
    pub seed: u64,
    pub config_hash: String,
    pub task_spec: TaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    text_tokens: Vec<TokenId>,
    visual_features: Vec<f64>,
    gold_label: usize,
    explanation_tokens: Vec<TokenId>,
}

pub fn write_jsonl(path: &Path, header: &DatasetHeader, examples: &[Example]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut line = |s: String| writeln!(w, "{s}").map_err(|e| CoreError::io(path, e));
    line(serde_json::to_string(&serde_json::json!({ "header": header }))?)?;
    for ex in examples {
        line(serde_json::to_string(&Record {
            text_tokens: ex.input.text_tokens.clone(),
            visual_features: ex.input.visual_features.clone(),
            gold_label: ex.gold_label,
            explanation_tokens: ex.explanation.clone(),
        })?)?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<(DatasetHeader, Vec<Example>)> {
    let f = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut lines = std::io::BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| CoreError::Parse(format!("{}: empty file", path.display())))?
        .map_err(|e| CoreError::io(path, e))?;
    #[derive(Deserialize)]
    struct Wrapper {
        header: DatasetHeader,
    }
    let header = serde_json::from_str::<Wrapper>(&first)?.header;
    let mut out = Vec::new();
    for l in lines {
        let l = l.map_err(|e| CoreError::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&l)?;
        out.push(Example {
            input: MultimodalInput {
                text_tokens: r.text_tokens,
                visual_features: r.visual_features,
            },
            gold_label: r.gold_label,
            explanation: r.explanation_tokens,
        });
    }
    Ok((header, out))
}
