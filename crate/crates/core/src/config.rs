//! TOML experiment configuration with `[feature]`, `[train]`, `[task]`,
//! `[model]` and `[sweep]` sections.
//!
//! ```toml
//! [feature]
//! degree = 2
//! eta = 1.0
//! eta_learnable = false
//!
//! [train]
//! max_epochs = 60
//!
//! [task]
//! kind = "synthetic"   # or "tsv" with train/val/test paths
//! d = 32
//! sigma = 0.25
//!
//! [model]
//! hidden = 32
//!
//! [sweep]
//! eta_grid = [1, 2, 4, 8, 16, 32, 64]
//! degrees = [2]
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Every key has a default; relative TSV paths are resolved against the
//! config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_tsv_splits, Dataset};
use crate::error::{Error, Result};
use crate::feature::{Degree, FeatureConfig};
use crate::nn::{Activation, ModelArch, Pooling, TrainConfig};
use crate::synth::{generate, SynthTaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSource {
    Synthetic(SynthTaskSpec),
    Tsv {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
    },
}

impl Default for TaskSource {
    fn default() -> Self {
        TaskSource::Synthetic(SynthTaskSpec::default())
    }
}

impl TaskSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            TaskSource::Synthetic(spec) => Ok(generate(spec)?.dataset),
            TaskSource::Tsv { train, val, test } => load_tsv_splits(train, val, test),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let TaskSource::Tsv { train, val, test } = self {
            for p in [train, val, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// Model shape knobs; vocabulary size comes from the dataset. Mean pooling is
/// the default because the synthetic tasks carry their values in token
/// counts, which max pooling cannot see.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Representation dimension; defaults to the synthetic task's `d`, or 32.
    pub dim: Option<usize>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub pooling: Pooling,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: None,
            embed_dim: 64,
            hidden: 512,
            pooling: Pooling::Mean,
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn resolve(&self, task: &TaskSource, vocab_size: usize) -> ModelArch {
        let dim = self.dim.unwrap_or(match task {
            TaskSource::Synthetic(spec) => spec.d,
            TaskSource::Tsv { .. } => 32,
        });
        ModelArch {
            vocab_size,
            embed_dim: self.embed_dim,
            dim,
            hidden: self.hidden,
            pooling: self.pooling,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub eta_grid: Vec<f64>,
    pub degrees: Vec<Degree>,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
    /// Mixed into every per-run seed.
    pub seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            eta_grid: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            degrees: vec![Degree::Two],
            seeds: vec![0, 1, 2, 3, 4],
            parallelism: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub feature: FeatureConfig,
    pub train: TrainConfig,
    pub task: TaskSource,
    pub model: ModelConfig,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.feature.validate()?;
        cfg.train.validate()?;
        if let TaskSource::Synthetic(spec) = &cfg.task {
            spec.validate()?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.task
            .resolve_paths(path.parent().unwrap_or_else(|| Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
