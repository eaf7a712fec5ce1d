//! Seeded training trials, checkpoints and per-example evaluation.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod run;
pub mod sgd;

pub use cache::{run_trial, RunCache, TrialResult, TrialRunner, CACHE_ENV};
pub use checkpoint::{checkpoint_file_name, Checkpoint, CheckpointSidecar};
pub use config::TrainConfig;
pub use eval::{evaluate_accuracy, evaluate_per_example_loss};
pub use run::{run_id, train_trial, EpochMetrics, TrainOutcome, TrainRunRecord};
pub use sgd::MomentumSgd;
