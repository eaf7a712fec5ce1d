//! Easiness scores: the per-example train loss after `T` updates, averaged
//! over `M` independently seeded trials.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::derive_seed;
use crate::trainer::{TrainConfig, TrialResult, TrialRunner};

pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_FRACTION: f64 = 0.1;

/// Seed of trial `m`: `derive_seed(master_seed, "trial", m)`.
pub fn trial_seeds(master_seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64)
        .map(|m| derive_seed(master_seed, "trial", m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasinessEntry {
    pub example_id: String,
    pub label: usize,
    pub easiness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasinessSidecar {
    pub dataset_id: String,
    pub architecture: String,
    pub arch_fingerprint: String,
    #[serde(rename = "T")]
    pub t_updates: u64,
    #[serde(rename = "M")]
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Easiness of every train example, sorted by example id.
#[derive(Debug, Clone, PartialEq)]
pub struct EasinessTable {
    pub dataset_id: String,
    /// Human-readable architecture label, e.g. `plain-cnn-w8-d3`.
    pub architecture: String,
    pub arch_fingerprint: String,
    pub t_updates: u64,
    pub seeds: Vec<u64>,
    pub entries: Vec<EasinessEntry>,
}

impl EasinessTable {
    /// Averages per-trial loss maps. The `M` values of each example are
    /// sorted before summation, so the result does not depend on trial order.
    pub fn from_trials(
        dataset: &Dataset,
        arch: &ArchitectureSpec,
        t_updates: u64,
        seeds: &[u64],
        losses: &[&BTreeMap<String, f64>],
    ) -> Result<Self> {
        if seeds.is_empty() || seeds.len() != losses.len() {
            return Err(Error::validation(
                "trials",
                format!("{} seeds for {} loss maps", seeds.len(), losses.len()),
            ));
        }
        let mut entries = Vec::with_capacity(dataset.split_len(Split::Train));
        let mut values = Vec::with_capacity(seeds.len());
        let mut train: Vec<_> = dataset.split(Split::Train);
        train.sort_by(|a, b| a.id.cmp(&b.id));
        for record in train {
            values.clear();
            for (map, seed) in losses.iter().zip(seeds) {
                let v = map.get(&record.id).copied().ok_or_else(|| {
                    Error::validation(
                        "trials",
                        format!("trial {seed} has no loss for {}", record.id),
                    )
                })?;
                values.push(v);
            }
            values.sort_by(f64::total_cmp);
            let easiness = values.iter().sum::<f64>() / values.len() as f64;
            entries.push(EasinessEntry {
                example_id: record.id.clone(),
                label: record.label,
                easiness,
            });
        }
        let table = Self {
            dataset_id: dataset.id().to_owned(),
            architecture: arch.label(),
            arch_fingerprint: arch.fingerprint(),
            t_updates,
            seeds: seeds.to_vec(),
            entries,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if self.seeds.is_empty() || distinct.len() != self.seeds.len() {
            return Err(Error::validation("seeds", "trial seeds must be nonempty and distinct"));
        }
        for pair in self.entries.windows(2) {
            if pair[0].example_id >= pair[1].example_id {
                return Err(Error::validation(
                    "easiness",
                    format!("entries not strictly sorted at {}", pair[1].example_id),
                ));
            }
        }
        if let Some(bad) = self
            .entries
            .iter()
            .find(|e| !(e.easiness.is_finite() && e.easiness >= 0.0))
        {
            return Err(Error::validation(
                "easiness",
                format!("{} has value {}", bad.example_id, bad.easiness),
            ));
        }
        Ok(())
    }

    pub fn trials(&self) -> usize {
        self.seeds.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.entries
            .binary_search_by(|e| e.example_id.as_str().cmp(id))
            .ok()
            .map(|i| self.entries[i].easiness)
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.example_id.clone()).collect()
    }

    pub fn values(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|e| (e.example_id.clone(), e.easiness))
            .collect()
    }

    /// The same table restricted to examples labelled `class`.
    pub fn for_class(&self, class: usize) -> EasinessTable {
        EasinessTable {
            entries: self.entries.iter().filter(|e| e.label == class).cloned().collect(),
            ..self.clone()
        }
    }

    /// Short provenance tag used in selection rules and file names.
    pub fn table_id(&self) -> String {
        format!("{}-T{}-M{}", self.architecture, self.t_updates, self.trials())
    }

    pub fn sidecar(&self, created_at: String, config_hash: Option<String>) -> EasinessSidecar {
        EasinessSidecar {
            dataset_id: self.dataset_id.clone(),
            architecture: self.architecture.clone(),
            arch_fingerprint: self.arch_fingerprint.clone(),
            t_updates: self.t_updates,
            trials: self.trials(),
            seeds: self.seeds.clone(),
            created_at,
            config_hash,
        }
    }

    /// `example_id,label,easiness` at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("example_id,label,easiness\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.example_id, e.label, e.easiness));
        }
        out
    }

    pub fn from_csv(text: &str, sidecar: &EasinessSidecar) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("example_id,label,easiness") {
            return Err(Error::validation("easiness csv", "missing or wrong header"));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let bad = || Error::validation("easiness csv", format!("malformed row {}: {line}", n + 2));
            let mut fields = line.split(',');
            let (Some(id), Some(label), Some(value), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad());
            };
            entries.push(EasinessEntry {
                example_id: id.to_owned(),
                label: label.parse().map_err(|_| bad())?,
                easiness: value.parse().map_err(|_| bad())?,
            });
        }
        if sidecar.seeds.len() != sidecar.trials {
            return Err(Error::validation("M", "sidecar M disagrees with its seed list"));
        }
        let table = Self {
            dataset_id: sidecar.dataset_id.clone(),
            architecture: sidecar.architecture.clone(),
            arch_fingerprint: sidecar.arch_fingerprint.clone(),
            t_updates: sidecar.t_updates,
            seeds: sidecar.seeds.clone(),
            entries,
        };
        table.validate()?;
        Ok(table)
    }

    /// Writes `<path>` (CSV) and `<path>.json` next to it. An existing sidecar
    /// that differs only in `created_at` is left untouched.
    pub fn save(&self, csv_path: &Path, config_hash: Option<String>) -> Result<()> {
        io::write_atomic(csv_path, self.to_csv().as_bytes())?;
        let sidecar_path = sidecar_path(csv_path);
        if let Ok(existing) = io::read_json::<EasinessSidecar>(&sidecar_path) {
            if existing == self.sidecar(existing.created_at.clone(), config_hash.clone()) {
                return Ok(());
            }
        }
        io::write_json(&sidecar_path, &self.sidecar(io::timestamp(), config_hash))
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let sidecar: EasinessSidecar = io::read_json(&sidecar_path(csv_path))?;
        let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::from_csv(&text, &sidecar)
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Trains `trials` seeded runs (reusing cached ones) and builds one table per
/// requested update count. Every `T` must be a checkpoint of `config`.
pub fn compute_easiness_at(
    arch: &ArchitectureSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    t_updates: &[u64],
    trials: usize,
    master_seed: u64,
    runner: &TrialRunner,
) -> Result<Vec<EasinessTable>> {
    if trials == 0 {
        return Err(Error::validation("M", "need at least one trial"));
    }
    if t_updates.is_empty() {
        return Err(Error::validation("T", "no update counts requested"));
    }
    for t in t_updates {
        if config.checkpoint_updates.binary_search(t).is_err() {
            return Err(Error::validation(
                "T",
                format!("{t} is not among checkpoint_updates {:?}", config.checkpoint_updates),
            ));
        }
    }
    let seeds = trial_seeds(master_seed, trials);
    let results = runner.run_seeds(arch, dataset, config, &seeds)?;
    tables_from_trials(dataset, arch, t_updates, &seeds, &results)
}

/// One table per update count from already finished trials.
pub fn tables_from_trials(
    dataset: &Dataset,
    arch: &ArchitectureSpec,
    t_updates: &[u64],
    seeds: &[u64],
    results: &[TrialResult],
) -> Result<Vec<EasinessTable>> {
    t_updates
        .iter()
        .map(|t| {
            let maps = results
                .iter()
                .map(|r| {
                    r.train_losses.get(t).ok_or_else(|| {
                        Error::validation("T", format!("run {} has no checkpoint at {t}", r.record.run_id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            EasinessTable::from_trials(dataset, arch, *t, seeds, &maps)
        })
        .collect()
}

/// Sequential, uncached easiness at a single `T`.
pub fn compute_easiness(
    arch: &ArchitectureSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    t_updates: u64,
    trials: usize,
    master_seed: u64,
) -> Result<EasinessTable> {
    let mut tables = compute_easiness_at(
        arch,
        dataset,
        config,
        &[t_updates],
        trials,
        master_seed,
        &TrialRunner::default(),
    )?;
    Ok(tables.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetKind {
    Easy,
    Hard,
    Random,
    Removed,
    Retained,
    Custom,
}

impl SubsetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsetKind::Easy => "easy",
            SubsetKind::Hard => "hard",
            SubsetKind::Random => "random",
            SubsetKind::Removed => "removed",
            SubsetKind::Retained => "retained",
            SubsetKind::Custom => "custom",
        }
    }
}

impl fmt::Display for SubsetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which end of the easiness ranking to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Easy,
    Hard,
}

impl Extreme {
    pub const BOTH: [Extreme; 2] = [Extreme::Easy, Extreme::Hard];

    pub fn kind(self) -> SubsetKind {
        match self {
            Extreme::Easy => SubsetKind::Easy,
            Extreme::Hard => SubsetKind::Hard,
        }
    }
}

impl fmt::Display for Extreme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind().fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSubset {
    pub kind: SubsetKind,
    pub ids: BTreeSet<String>,
    pub selection_rule: String,
}

impl ExampleSubset {
    pub fn new(kind: SubsetKind, ids: BTreeSet<String>, selection_rule: impl Into<String>) -> Self {
        Self {
            kind,
            ids,
            selection_rule: selection_rule.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// One id per line, sorted.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }
}

pub fn validate_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 0.5 {
        Ok(())
    } else {
        Err(Error::validation(
            "fraction",
            format!("must lie in (0, 0.5], got {fraction}"),
        ))
    }
}

/// `⌊fraction · n⌋`, robust to representation error in the product.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Ranking order for `which`; ties fall back to ascending example id.
fn extreme_order(which: Extreme) -> impl Fn(&&EasinessEntry, &&EasinessEntry) -> Ordering {
    move |a, b| {
        let by_value = a.easiness.total_cmp(&b.easiness);
        let by_value = match which {
            Extreme::Easy => by_value,
            Extreme::Hard => by_value.reverse(),
        };
        by_value.then_with(|| a.example_id.cmp(&b.example_id))
    }
}

/// The `⌊fraction · N⌋` examples with the lowest (easy) or highest (hard)
/// easiness.
pub fn select_extremes(table: &EasinessTable, fraction: f64, which: Extreme) -> Result<ExampleSubset> {
    validate_fraction(fraction)?;
    if table.is_empty() {
        return Err(Error::validation("easiness", "table is empty"));
    }
    let k = fraction_count(fraction, table.len());
    if k == 0 {
        return Err(Error::validation(
            "fraction",
            format!("{fraction} of {} examples selects nothing", table.len()),
        ));
    }
    let mut ranked: Vec<&EasinessEntry> = table.entries.iter().collect();
    ranked.sort_by(extreme_order(which));
    let ids = ranked[..k].iter().map(|e| e.example_id.clone()).collect();
    Ok(ExampleSubset::new(
        which.kind(),
        ids,
        format!("{which} {fraction} of {}", table.table_id()),
    ))
}

/// `e_i / Σ e`. Fails when every value is zero.
pub fn normalize_easiness(table: &EasinessTable) -> Result<BTreeMap<String, f64>> {
    let total: f64 = table.entries.iter().map(|e| e.easiness).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateEasiness);
    }
    Ok(table
        .entries
        .iter()
        .map(|e| (e.example_id.clone(), e.easiness / total))
        .collect())
}

#[cfg(test)]
pub(crate) fn table_from_values(values: &[f64]) -> EasinessTable {
    EasinessTable {
        dataset_id: "toy".into(),
        architecture: "plain-cnn-w1-d1".into(),
        arch_fingerprint: "plain-cnn-0".into(),
        t_updates: 1,
        seeds: vec![1],
        entries: values
            .iter()
            .enumerate()
            .map(|(i, &v)| EasinessEntry {
                example_id: format!("train-{i:05}"),
                label: i % 2,
                easiness: v,
            })
            .collect(),
    }
}
