use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::imageproc::PreprocConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epochs without validation improvement before training stops.
    pub stop_tolerance: usize,
    /// Epochs without validation improvement before the learning rate is reduced.
    pub reduce_tolerance: usize,
    pub reduce_factor: f64,
    /// Smallest decrease of the validation loss that counts as an improvement.
    pub min_delta: f64,
    pub seed: u64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub preprocess: PreprocConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch: 16,
            lr: 0.001,
            stop_tolerance: 20,
            reduce_tolerance: 15,
            reduce_factor: 0.2,
            min_delta: 1e-6,
            seed: 0,
            augment: true,
            augmentation: AugmentConfig::default(),
            preprocess: PreprocConfig::default(),
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.reduce_factor > 0.0 && self.reduce_factor < 1.0) {
            return bad(format!("reduce_factor must lie in (0, 1), got {}", self.reduce_factor));
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta must be >= 0, got {}", self.min_delta));
        }
        self.augmentation.validate()?;
        self.preprocess.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
