//! Alternating optimization, checkpoints and inference.

mod checkpoint;
mod optim;
mod step;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{latest_checkpoint, Checkpoint, CheckpointState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::{Adam, AdamConfig};
pub use step::{
    discriminator_loss, discriminator_step, evaluate_losses, generator_loss, generator_step, iteration_terms,
    objective_tensor, reconstruction_only, train_step, IterationTerms, Pass, StepReport,
};
pub use trainer::{infer, FitOptions, FitSummary, Inference, LogRecord, Progress, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Feedback iterations `k` after the initial pass.
    pub feedback_loops: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            feedback_loops: 2,
            epochs: 30,
            batch_size: 1,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn generator_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_g,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn discriminator_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_d,
            ..self.generator_adam()
        }
    }

    /// A zero learning rate is accepted and freezes that player.
    pub fn validate(&self) -> Result<()> {
        self.generator_adam().validate()?;
        self.discriminator_adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }
}
