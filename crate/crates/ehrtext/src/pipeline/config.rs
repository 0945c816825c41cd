//! Run configuration with per-stage defaults.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Masked,
    Contrastive,
    Finetune,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Masked => "masked",
            Stage::Contrastive => "contrastive",
            Stage::Finetune => "finetune",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextProfile {
    /// 768-wide, four layers: the full-size text encoder.
    Standard,
    /// 64-wide, two layers: enough for desk-scale synthetic runs.
    Compact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub stage: Stage,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// contrastive temperature
    pub tau: f64,
    /// cell mask probability for masked pretraining
    pub mask_rate: f64,
    /// pairs held out of contrastive training for the recall@1 metric
    pub holdout: usize,
    pub text_profile: TextProfile,
    pub seed: u64,
    pub deterministic: bool,
    /// data-parallel width for the contrastive step
    pub data_parallel: usize,
}

impl RunConfig {
    /// Stage defaults: contrastive trains at lr 1e-4 / wd 1e-4 for 13
    /// epochs, fine-tuning at lr 5e-4 / wd 1e-4 for 15, both with batch 64
    /// and temperature 0.1. Masked pretraining warms up at lr 1e-3 for 10
    /// epochs with a 0.25 mask rate.
    pub fn for_stage(stage: Stage, seed: u64) -> RunConfig {
        let (lr, epochs) = match stage {
            Stage::Masked => (1e-3, 10),
            Stage::Contrastive => (1e-4, 13),
            Stage::Finetune => (5e-4, 15),
        };
        RunConfig {
            stage,
            lr,
            weight_decay: 1e-4,
            batch_size: 64,
            epochs,
            tau: 0.1,
            mask_rate: 0.25,
            holdout: 100,
            text_profile: TextProfile::Compact,
            seed,
            deterministic: true,
            data_parallel: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if !(0.0 < self.mask_rate && self.mask_rate < 1.0) {
            return Err(Error::Config(format!(
                "mask rate must be in (0,1), got {}",
                self.mask_rate
            )));
        }
        if self.data_parallel == 0 {
            return Err(Error::Config("data-parallel width must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<RunConfig> {
        Ok(serde_json::from_str(s)?)
    }
}
