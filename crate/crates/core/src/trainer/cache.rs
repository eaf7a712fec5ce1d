//! On-disk trial cache.
//!
//! A finished trial is stored under `<root>/<run_id>/` as `record.json`, its
//! checkpoints, and `train_losses.json` holding the per-example train loss at
//! every checkpoint. The losses file is written last and marks the entry as
//! complete.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::config::TrainConfig;
use crate::trainer::eval::evaluate_per_example_loss;
use crate::trainer::run::{run_id, train_trial, TrainRunRecord};

pub const CACHE_ENV: &str = "EASECORE_CACHE_DIR";

const RECORD_FILE: &str = "record.json";
const LOSSES_FILE: &str = "train_losses.json";

/// A trial reduced to what downstream analysis needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub record: TrainRunRecord,
    /// Update count → example id → train loss (eval-mode preprocessing).
    pub train_losses: BTreeMap<u64, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone)]
pub struct RunCache {
    root: PathBuf,
}

impl RunCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn load(&self, run_id: &str) -> Option<TrialResult> {
        let dir = self.entry_dir(run_id);
        let record: TrainRunRecord = io::read_json(&dir.join(RECORD_FILE)).ok()?;
        let train_losses = io::read_json(&dir.join(LOSSES_FILE)).ok()?;
        (record.run_id == run_id).then_some(TrialResult {
            record,
            train_losses,
        })
    }

    fn store(&self, result: &TrialResult, checkpoints: &[Checkpoint]) -> Result<()> {
        let dir = self.entry_dir(&result.record.run_id);
        for ckpt in checkpoints {
            ckpt.save(&dir)?;
        }
        io::write_json(&dir.join(RECORD_FILE), &result.record)?;
        io::write_json(&dir.join(LOSSES_FILE), &result.train_losses)
    }
}

/// Trains (or fetches from `cache`) one trial and evaluates the per-example
/// train loss at each of its checkpoints.
pub fn run_trial(
    spec: &ArchitectureSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
    cache: Option<&RunCache>,
) -> Result<TrialResult> {
    let id = run_id(spec, dataset.id(), config, seed);
    if let Some(hit) = cache.and_then(|c| c.load(&id)) {
        log::info!("cache hit for run {id}");
        return Ok(hit);
    }
    let outcome = train_trial(spec, dataset, config, seed)?;
    let mut train_losses = BTreeMap::new();
    for (&t, ckpt) in &outcome.checkpoints {
        train_losses.insert(t, evaluate_per_example_loss(ckpt, dataset, Split::Train)?);
    }
    let result = TrialResult {
        record: outcome.record,
        train_losses,
    };
    if let Some(cache) = cache {
        let checkpoints: Vec<_> = outcome.checkpoints.into_values().collect();
        cache.store(&result, &checkpoints)?;
    }
    Ok(result)
}

/// Runs independent trials, optionally cached and on a worker pool.
#[derive(Debug, Clone, Default)]
pub struct TrialRunner {
    pub cache: Option<RunCache>,
    /// Worker threads; 0 or 1 runs trials sequentially.
    pub workers: usize,
}

impl TrialRunner {
    pub fn new(cache: Option<RunCache>, workers: usize) -> Self {
        Self { cache, workers }
    }

    /// One result per seed, in seed order. The first failing seed (in that
    /// order) is reported as [`Error::TrialFailed`].
    pub fn run_seeds(
        &self,
        spec: &ArchitectureSpec,
        dataset: &Dataset,
        config: &TrainConfig,
        seeds: &[u64],
    ) -> Result<Vec<TrialResult>> {
        let one = |&seed: &u64| run_trial(spec, dataset, config, seed, self.cache.as_ref());
        let results: Vec<Result<TrialResult>> = self.map(seeds, one)?;
        results
            .into_iter()
            .zip(seeds)
            .map(|(r, &seed)| {
                r.map_err(|e| Error::TrialFailed {
                    seed,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Applies `f` to every item, in parallel when `workers > 1`. Output
    /// order follows input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.workers <= 1 || items.len() <= 1 {
            return Ok(items.iter().map(f).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::validation("workers", e.to_string()))?;
        Ok(pool.install(|| items.par_iter().map(f).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::toy;

    #[test]
    fn second_run_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RunCache::new(dir.path());
        let data = toy(12, 4, 3);
        let spec = ArchitectureSpec::new("plain-cnn", 2, 2, 3, data.shape());
        let mut config = TrainConfig::new(4, 1);
        config.checkpoint_updates = vec![0, 3];
        let first = run_trial(&spec, &data, &config, 5, Some(&cache)).unwrap();
        let entry = cache.entry_dir(&first.record.run_id);
        assert!(entry.join(format!("{}.T3.ckpt", first.record.run_id)).is_file());
        let second = run_trial(&spec, &data, &config, 5, Some(&cache)).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.train_losses[&3].len(), 12);
    }
}
