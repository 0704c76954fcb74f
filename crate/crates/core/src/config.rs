// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ccmr::NuConfig;
use crate::error::{CoreError, Result};
use crate::models::ModelDims;
use crate::synthdata::TaskSpec;
use crate::training::{ClassifierConfig, ExplainerConfig};

/// Version tag written into every artifact.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "runs/data".into(),
            checkpoints: "runs/checkpoints".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSizes {
    pub train: usize,
    pub test: usize,
}

impl Default for DataSizes {
    fn default() -> Self {
        Self {
            train: 9000,
            test: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed for data generation and classifier training. The explainer has
    /// its own seed in `[explainer]`.
    pub seed: u64,
    pub paths: Paths,
    pub sizes: DataSizes,
    pub task: TaskSpec,
    /// Vocabulary, feature and class widths are overwritten from `task`.
    pub dims: ModelDims,
    pub classifier: ClassifierConfig,
    pub explainer: ExplainerConfig,
    pub ccmr: NuConfig,
    /// Number of test items scored by `ccmr`; all when absent.
    pub ccmr_items: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            sizes: DataSizes::default(),
            task: TaskSpec::default(),
            dims: ModelDims::default(),
            classifier: ClassifierConfig::default(),
            explainer: ExplainerConfig::default(),
            ccmr: NuConfig::default(),
            ccmr_items: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    /// Model widths with the task-dependent fields filled in.
    pub fn model_dims(&self) -> Result<ModelDims> {
        Ok(ModelDims {
            vocab: self.task.vocab()?.len(),
            v_dim: self.task.v_dim(),
            classes: self.task.num_labels(),
            ..self.dims
        })
    }

    /// Classifier settings with the run seed applied.
    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            seed: self.seed,
            ..self.classifier.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Provenance fields embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub format_version: u32,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            format_version: FORMAT_VERSION,
        }
    }
}
