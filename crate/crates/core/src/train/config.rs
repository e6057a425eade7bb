use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LrSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub shuffle: bool,
    /// Telemetry is recorded every `log_every` epochs and always after the last.
    pub log_every: usize,
}

impl Default for TrainConfig {
    /// Synthetic-task recipe: lr 5e-4, batch 32, 100 epochs, SGD momentum 0.9.
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr0: 5e-4,
            momentum: 0.9,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            shuffle: true,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::config("lr0", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Fine-tuning recipe derived from a pretraining config: 20 epochs,
    /// cosine annealing from one fifth of the pretraining learning rate.
    pub fn finetune_from(pretrain: &TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: 20,
            lr0: pretrain.lr0 / 5.0,
            lr_schedule: LrSchedule::Cosine,
            ..pretrain.clone()
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule.lr_at(epoch, self.epochs, self.lr0)
    }
}
