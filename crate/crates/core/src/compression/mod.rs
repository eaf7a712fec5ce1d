//! Easiness-driven dataset ablation and retrain experiments.

pub mod experiment;
pub mod sampling;
pub mod strategy;

pub use experiment::{
    ablation_seed, curves_csv, run_compression_experiment, CompressionResult, CompressionRun,
    RoundSummary,
};
pub use sampling::{removal_weights, weighted_sample, RemovalWeighting};
pub use strategy::{
    ablate_once, validate_ratio, Ablation, AblationContext, AblationPlan, AblationStrategy,
    OneShot, SelectionMode, Stepwise, StepwiseRound, StrategyRegistry, STEPWISE_ROUND_FRACTION,
};
