//! Declarative experiment configuration (one JSON document).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{self, ArchitectureSpec};
use crate::compression::{SelectionMode, Stepwise, StrategyRegistry};
use crate::data::{self, Dataset, SyntheticBiasSpec};
use crate::easiness::{validate_fraction, DEFAULT_FRACTION, DEFAULT_TRIALS};
use crate::error::{Error, Result};
use crate::io;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    /// CIFAR-10 binary batches.
    Cifar10 { path: PathBuf },
    /// A directory written by `save_raw_dir` or `easecore synth`.
    Dir { path: PathBuf },
    Synthetic { spec: SyntheticBiasSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsample {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<Subsample>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureEntry {
    pub family: String,
    pub width: usize,
    pub depth: usize,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EasinessConfig {
    /// Update counts at which easiness is measured. Required.
    pub t_updates: Vec<u64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub master_seed: u64,
}

fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// `[early T, final T]` for the begin/end comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub begin_end: Option<[u64; 2]>,
    /// Table update count used for mean images; defaults to the first `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_t: Option<u64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fraction: DEFAULT_FRACTION,
            begin_end: None,
            image_t: None,
        }
    }
}

fn default_strategies() -> Vec<String> {
    ["easy", "hard", "random", "stepwise"].map(String::from).into()
}

fn default_ratios() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    /// Retrain seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Index into `architectures`.
    #[serde(default)]
    pub architecture: usize,
    /// Easiness update count used for ranking; defaults to the first `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_updates: Option<u64>,
    #[serde(default)]
    pub stepwise_selection: SelectionMode,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            strategies: default_strategies(),
            ratios: default_ratios(),
            seeds: default_seeds(),
            architecture: 0,
            t_updates: None,
            stepwise_selection: SelectionMode::Weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub architectures: Vec<ArchitectureEntry>,
    pub train: TrainConfig,
    pub easiness: EasinessConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub compression: CompressionConfig,
    pub output_dir: PathBuf,
}

/// Prefixes the field of a validation error with its config section.
fn in_section(section: &str, err: Error) -> Error {
    match err {
        Error::Validation { field, reason } => Error::Validation {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

impl ExperimentConfig {
    /// Parses the file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset.source {
            DatasetSource::Cifar10 { path } | DatasetSource::Dir { path } => resolve(path),
            DatasetSource::Synthetic { .. } => {}
        }
        resolve(&mut self.output_dir);
    }

    /// Hash of the canonical JSON encoding; embedded in every output.
    pub fn hash(&self) -> String {
        io::hash_json(self)[..16].to_owned()
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::validation("architectures", "list is empty"));
        }
        let registry = arch::ArchRegistry::with_builtins();
        for (i, a) in self.architectures.iter().enumerate() {
            if registry.families().all(|f| f != a.family) {
                return Err(Error::validation(
                    format!("architectures[{i}].family"),
                    format!(
                        "unknown family {:?}; known: {}",
                        a.family,
                        registry.families().collect::<Vec<_>>().join(", ")
                    ),
                ));
            }
        }
        self.train.validate().map_err(|e| in_section("train", e))?;
        if let DatasetSource::Synthetic { spec } = &self.dataset.source {
            spec.validate().map_err(|e| in_section("dataset.source.spec", e))?;
        }

        let e = &self.easiness;
        if e.trials == 0 {
            return Err(Error::validation("easiness.trials", "must be at least 1"));
        }
        if e.t_updates.is_empty() {
            return Err(Error::validation("easiness.t_updates", "at least one T is required"));
        }
        for t in &e.t_updates {
            self.require_checkpoint("easiness.t_updates", *t)?;
        }

        let a = &self.analysis;
        validate_fraction(a.fraction).map_err(|e| in_section("analysis", e))?;
        if let Some([early, late]) = a.begin_end {
            if early >= late {
                return Err(Error::validation(
                    "analysis.begin_end",
                    format!("early T ({early}) must be smaller than final T ({late})"),
                ));
            }
            self.require_checkpoint("analysis.begin_end", early)?;
            self.require_checkpoint("analysis.begin_end", late)?;
        }
        if let Some(t) = a.image_t {
            self.require_checkpoint("analysis.image_t", t)?;
        }

        let c = &self.compression;
        let registry = StrategyRegistry::with_builtins(c.stepwise_selection);
        for s in &c.strategies {
            registry.get(s).map_err(|e| in_section("compression", e))?;
        }
        if c.strategies.is_empty() {
            return Err(Error::validation("compression.strategies", "list is empty"));
        }
        if c.ratios.is_empty() {
            return Err(Error::validation("compression.ratios", "list is empty"));
        }
        for &r in &c.ratios {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::validation(
                    "compression.ratios",
                    format!("ablation ratio must lie in [0, 1), got {r}"),
                ));
            }
            if r > 0.0 && c.strategies.iter().any(|s| s == "stepwise") {
                Stepwise::rounds_for(r).map_err(|e| in_section("compression", e))?;
            }
        }
        if c.seeds.is_empty() {
            return Err(Error::validation("compression.seeds", "need at least one seed"));
        }
        if c.architecture >= self.architectures.len() {
            return Err(Error::validation(
                "compression.architecture",
                format!("index {} but only {} architectures", c.architecture, self.architectures.len()),
            ));
        }
        if let Some(t) = c.t_updates {
            self.require_checkpoint("compression.t_updates", t)?;
        }
        Ok(())
    }

    fn require_checkpoint(&self, field: &str, t: u64) -> Result<()> {
        if self.train.checkpoint_updates.binary_search(&t).is_ok() {
            Ok(())
        } else {
            Err(Error::validation(
                field,
                format!("T = {t} is not in train.checkpoint_updates"),
            ))
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let dataset = match &self.dataset.source {
            DatasetSource::Cifar10 { path } => data::loader::load_cifar10(path)?,
            DatasetSource::Dir { path } => data::load_dataset(path)?,
            DatasetSource::Synthetic { spec } => data::generate_biased_dataset(spec)?.dataset,
        };
        match self.dataset.subsample {
            Some(s) => dataset
                .subsample_balanced(s.train, s.test, s.seed)
                .map_err(|e| in_section("dataset", e)),
            None => Ok(dataset),
        }
    }

    pub fn architecture_specs(&self, dataset: &Dataset) -> Vec<ArchitectureSpec> {
        self.architectures
            .iter()
            .map(|a| {
                ArchitectureSpec::new(&a.family, a.width, a.depth, dataset.num_classes(), dataset.shape())
            })
            .collect()
    }

    pub fn image_t(&self) -> u64 {
        self.analysis.image_t.unwrap_or(self.easiness.t_updates[0])
    }

    pub fn compression_t(&self) -> u64 {
        self.compression.t_updates.unwrap_or(self.easiness.t_updates[0])
    }

    /// Every update count the easiness stage must produce.
    pub fn all_t(&self) -> Vec<u64> {
        let mut ts = self.easiness.t_updates.clone();
        ts.extend(self.analysis.begin_end.iter().flatten());
        ts.push(self.image_t());
        ts.push(self.compression_t());
        ts.sort_unstable();
        ts.dedup();
        ts
    }
}
