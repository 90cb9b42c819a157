use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, TrainError};

/// Optimizer and schedule settings. A config file is a flat JSON object
/// holding any subset of these fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Instances per optimizer step.
    pub batch_size: usize,
    /// Weight of the stop-head loss.
    pub stop_loss_weight: f64,
    pub clip_norm: f64,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 8,
            stop_loss_weight: 1.0,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning_rate, adam_eps and clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.stop_loss_weight >= 0.0) || !self.stop_loss_weight.is_finite() {
            return bad("stop_loss_weight must be finite and non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}
