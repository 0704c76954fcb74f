// SPDX-License-Identifier: MIT OR Apache-2.0

//! Artifact locations, provenance stamping and prerequisite checks.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use cause_core::config::{Provenance, RunConfig};
use cause_core::models::{Explainer, FrozenClassifier, ModelDims};
use cause_core::synthdata::{read_jsonl, Example, LabelLexicon, Vocab};
use cause_core::training::AblationMode;
use gradcore::Checkpoint;
use serde::Serialize;

pub struct Context {
    pub cfg: RunConfig,
    pub provenance: Provenance,
    pub dims: ModelDims,
    pub vocab: Vocab,
    pub lexicon: LabelLexicon,
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Context {
    pub fn load(config: Option<&Path>, report_dir: Option<PathBuf>) -> anyhow::Result<Self> {
        let cfg = match config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        let vocab = cfg.task.vocab()?;
        let lexicon = LabelLexicon::from_spec(&cfg.task, &vocab);
        Ok(Self {
            provenance: Provenance::of(&cfg),
            dims: cfg.model_dims()?,
            vocab,
            lexicon,
            data_dir: cfg.paths.data.clone(),
            checkpoint_dir: cfg.paths.checkpoints.clone(),
            report_dir: report_dir.unwrap_or_else(|| cfg.paths.reports.clone()),
            cfg,
        })
    }

    pub fn train_path(&self) -> PathBuf {
        self.data_dir.join("train.jsonl")
    }

    pub fn test_path(&self) -> PathBuf {
        self.data_dir.join("test.jsonl")
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.checkpoint_dir.join("classifier.ckpt")
    }

    pub fn explainer_path(&self, mode: AblationMode) -> PathBuf {
        self.checkpoint_dir.join(format!("explainer-{}.ckpt", mode.flag()))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.report_dir.join(name)
    }

    pub fn load_split(&self, path: &Path, producer: &str) -> anyhow::Result<Vec<Example>> {
        require(path, producer)?;
        let (header, examples) = read_jsonl(path)?;
        if header.task_spec != self.cfg.task {
            bail!("{} was generated for a different task; rerun `cause {producer}`", path.display());
        }
        Ok(examples)
    }

    pub fn load_classifier(&self) -> anyhow::Result<FrozenClassifier> {
        let path = self.classifier_path();
        require(&path, "train-classifier")?;
        let ck = Checkpoint::load(&path).with_context(|| format!("reading {}", path.display()))?;
        FrozenClassifier::from_checkpoint(self.dims, &ck)
            .with_context(|| format!("{} does not match the configured model widths", path.display()))
    }

    pub fn load_explainer(&self, mode: AblationMode) -> anyhow::Result<Explainer> {
        let path = self.explainer_path(mode);
        require(&path, &format!("train-explainer --mode {}", mode.flag()))?;
        let ck = Checkpoint::load(&path).with_context(|| format!("reading {}", path.display()))?;
        Explainer::from_checkpoint(self.dims, self.vocab.eos(), &ck)
            .with_context(|| format!("{} does not match the configured model widths", path.display()))
    }

    /// Checkpoint metadata carrying the run's provenance.
    pub fn stamp(&self, ck: Checkpoint) -> Checkpoint {
        ck.with_meta("config_hash", self.provenance.config_hash.clone())
            .with_meta("seed", self.provenance.seed.to_string())
            .with_meta("format_version", self.provenance.format_version.to_string())
    }

    /// Comment line written at the top of every CSV artifact.
    pub fn csv_preamble(&self) -> String {
        format!(
            "# config_hash={} seed={} format_version={}\n",
            self.provenance.config_hash, self.provenance.seed, self.provenance.format_version
        )
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, body: &T) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            provenance: &'a Provenance,
            #[serde(flatten)]
            body: &'a T,
        }
        let json = serde_json::to_string_pretty(&Stamped {
            provenance: &self.provenance,
            body,
        })?;
        write_file(path, (json + "\n").as_bytes())
    }

    /// Writes a CSV artifact produced by `fill`, prefixed with the provenance line.
    pub fn write_csv(&self, path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<()> {
        let mut buf = self.csv_preamble().into_bytes();
        fill(&mut buf)?;
        write_file(path, &buf)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Fails with a message naming the missing artifact and the command that makes it.
pub fn require(path: &Path, producer: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!(
            "missing prerequisite artifact {}; run `cause {producer}` first",
            path.display()
        );
    }
    Ok(())
}
