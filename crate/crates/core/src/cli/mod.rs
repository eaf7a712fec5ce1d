//! Experiment orchestration behind the `easecore` binary.

pub mod commands;
pub mod config;
pub mod plots;

pub use commands::{
    cmd_analyze, cmd_compress, cmd_easiness, cmd_synth, AnalysisSummary, CompressionSummary,
    EasinessSummary, RunOptions, Session, RUN_FILE,
};
pub use config::{
    AnalysisConfig, ArchitectureEntry, CompressionConfig, DatasetConfig, DatasetSource,
    EasinessConfig, ExperimentConfig, Subsample,
};
