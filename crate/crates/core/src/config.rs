//! TOML experiment configuration. Every field has a default and unknown keys
//! are rejected.
//!
//! ```toml
//! seed = 7
//!
//! [quantize]
//! algo = "unbiased"
//!
//! [variance]
//! block_sizes = [32, 64, 128]
//! outlier_props = [0.0, 0.01]
//! n_samples = 256
//!
//! [train]
//! steps = 200
//!
//! [study]
//! arms = ["EXACT", "MXFP4_RHT_SR"]
//! seeds = [0, 1, 2]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mx::MxAlgorithm;
use crate::train::{BackwardMode, TrainConfig};
use crate::variancelab::VarianceSweepConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeOptions {
    pub algo: MxAlgorithm,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        Self {
            algo: MxAlgorithm::Reference,
        }
    }
}

/// Arms and seeds of a training study. Each run takes the `[train]` table
/// with its `backward_mode` and `seed` replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainStudy {
    pub arms: Vec<BackwardMode>,
    /// Empty means the top-level seed only.
    pub seeds: Vec<u64>,
}

impl Default for TrainStudy {
    fn default() -> Self {
        Self {
            arms: BackwardMode::ALL.to_vec(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub quantize: QuantizeOptions,
    pub variance: VarianceSweepConfig,
    pub train: TrainConfig,
    pub study: TrainStudy,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Config file if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Sweep configuration with the top-level seed applied.
    pub fn variance_sweep(&self) -> VarianceSweepConfig {
        VarianceSweepConfig {
            seed: self.seed,
            ..self.variance.clone()
        }
    }

    /// Seeds of the training study.
    pub fn train_seeds(&self) -> Vec<u64> {
        if self.study.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.study.seeds.clone()
        }
    }
}
