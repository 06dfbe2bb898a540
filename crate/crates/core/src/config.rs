//! Run configuration: every tunable of a train/evaluate run, loadable from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CosineMode, DEFAULT_PROJECTIONS};
use crate::networks::{FeatureDims, ModelConfig};
use crate::trainer::TrainConfig;
use crate::zsl::{ClassifierConfig, DEFAULT_PER_CLASS_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub classifier: ClassifierConfig,
    /// Synthetic rows generated per untouched class.
    pub per_class_count: usize,
    /// Every `holdout_stride`-th touched row per class is held out for testing.
    pub holdout_stride: usize,
    pub projections: usize,
    pub cosine_mode: CosineMode,
    /// Seed for synthesis and metric projections. On load it is also copied into
    /// the training and classifier seeds.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            classifier: ClassifierConfig::default(),
            per_class_count: DEFAULT_PER_CLASS_COUNT,
            holdout_stride: 5,
            projections: DEFAULT_PROJECTIONS,
            cosine_mode: CosineMode::ClassMean,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Sets one seed for model init, training, classifiers, synthesis and metrics.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.classifier.seed = seed;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    /// Copies the feature widths of a dataset into the model configuration.
    pub fn adopt_dims(&mut self, dims: FeatureDims) {
        self.model.dims = dims;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.classifier.validate()?;
        if self.per_class_count == 0 {
            return Err(Error::InvalidConfig("per_class_count must be positive".into()));
        }
        if self.holdout_stride < 2 {
            return Err(Error::InvalidConfig("holdout_stride must be at least 2".into()));
        }
        if self.projections == 0 {
            return Err(Error::InvalidConfig("projections must be positive".into()));
        }
        Ok(())
    }
}
