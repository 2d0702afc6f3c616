//! Binary cross-entropy, RAdam + LookAhead, the training loop and checkpoints.

mod checkpoint;
mod fit;
mod optim;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, BestMeta, Checkpoint, RngState, TPFC_MAGIC, TPFC_VERSION};
pub use fit::{fit, score_examples, validation_loss, write_epoch_log, EpochLog, FitResult};
pub use optim::{lookahead_sync, Lookahead, Optimizer, RAdam};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// `-(y·ln p + (1-y)·ln(1-p))` with clamped `p`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Sum of [`bce_loss`] over a batch.
pub fn bce_loss_sum(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::usage(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    Ok(probs.iter().zip(labels).map(|(&p, &y)| bce_loss(p, y)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lookahead_k: 5,
            lookahead_alpha: 0.5,
            batch_size: 1,
            max_epochs: 50,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be a non-negative number", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if self.lookahead_k == 0 {
            return bad("lookahead_k must be at least 1".into());
        }
        if !(self.lookahead_alpha > 0.0 && self.lookahead_alpha <= 1.0) {
            return bad(format!("lookahead_alpha {} outside (0, 1]", self.lookahead_alpha));
        }
        if self.batch_size != 1 {
            return bad(format!("batch_size {} is not supported; pairs are trained one at a time", self.batch_size));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        Ok(())
    }
}
