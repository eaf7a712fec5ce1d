use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_initial_lr() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

/// Optimizer and schedule for one training trial. Batch size and epoch
/// count are required: the update count `T` only has meaning relative to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_initial_lr")]
    pub initial_lr: f64,
    /// Epochs (0-based) from which the learning rate is divided by a further 10.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Update counts at which parameters are snapshotted.
    #[serde(default)]
    pub checkpoint_updates: Vec<u64>,
    /// Random translation and flipping during training.
    #[serde(default = "default_true")]
    pub augment: bool,
}

impl TrainConfig {
    pub fn new(batch_size: usize, max_epochs: usize) -> Self {
        Self {
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            initial_lr: default_initial_lr(),
            lr_milestones: Vec::new(),
            batch_size,
            max_epochs,
            checkpoint_updates: Vec::new(),
            augment: true,
        }
    }

    pub fn updates_per_epoch(&self, train_examples: usize) -> u64 {
        train_examples.div_ceil(self.batch_size.max(1)) as u64
    }

    pub fn total_updates(&self, train_examples: usize) -> u64 {
        self.updates_per_epoch(train_examples) * self.max_epochs as u64
    }

    /// `initial_lr / 10^k` where `k` milestones are `<= epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial_lr / 10f64.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs", "must be >= 1"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::validation(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::validation(
                "weight_decay",
                format!("must be finite and >= 0, got {}", self.weight_decay),
            ));
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::validation(
                "initial_lr",
                format!("must be finite and > 0, got {}", self.initial_lr),
            ));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "lr_milestones",
                "must be strictly increasing",
            ));
        }
        if self.checkpoint_updates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "checkpoint_updates",
                "must be sorted ascending without duplicates",
            ));
        }
        Ok(())
    }

    /// Full validation including checkpoint reachability for a train split of
    /// `train_examples` examples.
    pub fn validate_for(&self, train_examples: usize) -> Result<()> {
        self.validate()?;
        let total = self.total_updates(train_examples);
        if let Some(&last) = self.checkpoint_updates.last() {
            if last > total {
                return Err(Error::validation(
                    "checkpoint_updates",
                    format!(
                        "T = {last} exceeds the {total} updates of {} epochs over {train_examples} examples at batch size {}",
                        self.max_epochs, self.batch_size
                    ),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_divides_by_ten_per_milestone() {
        let mut cfg = TrainConfig::new(128, 300);
        cfg.lr_milestones = vec![150, 250];
        assert_eq!(cfg.lr_at_epoch(0), 0.1);
        assert_eq!(cfg.lr_at_epoch(149), 0.1);
        assert_eq!(cfg.lr_at_epoch(150), 0.1 / 10.0);
        assert_eq!(cfg.lr_at_epoch(249), 0.1 / 10.0);
        assert_eq!(cfg.lr_at_epoch(250), 0.1 / 100.0);
        assert_eq!(cfg.lr_at_epoch(299), 0.1 / 100.0);
    }

    #[test]
    fn recipe_defaults_from_json() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"batch_size": 128, "max_epochs": 20}"#).unwrap();
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.initial_lr, 0.1);
        assert!(cfg.augment);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"max_epochs": 20}"#).is_err());
    }

    #[test]
    fn update_counts() {
        let cfg = TrainConfig::new(128, 20);
        assert_eq!(cfg.updates_per_epoch(10_000), 79);
        assert_eq!(cfg.total_updates(10_000), 1580);
        assert_eq!(cfg.updates_per_epoch(128), 1);
    }

    #[test]
    fn checkpoints_must_be_sorted_and_reachable() {
        let mut cfg = TrainConfig::new(10, 2);
        cfg.checkpoint_updates = vec![5, 3];
        assert!(cfg.validate().is_err());
        cfg.checkpoint_updates = vec![3, 20];
        assert!(cfg.validate_for(100).is_ok());
        assert!(cfg.validate_for(50).is_err());
    }
}
