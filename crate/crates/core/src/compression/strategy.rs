use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::compression::sampling::{removal_weights, weighted_sample, RemovalWeighting};
use crate::data::Dataset;
use crate::easiness::{
    compute_easiness_at, fraction_count, EasinessTable, ExampleSubset, SubsetKind,
};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, Stream};
use crate::trainer::{TrainConfig, TrialRunner};

/// Fraction of the original train set removed per stepwise round.
pub const STEPWISE_ROUND_FRACTION: f64 = 0.1;

/// How a round picks its removals from the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Weighted sampling without replacement.
    #[default]
    Weighted,
    /// The `k` lowest-easiness examples, ties by id.
    BottomK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub strategy: String,
    pub target_ratio: f64,
    pub rng_seed: u64,
    /// Removals per stepwise round; a single entry for one-shot strategies.
    pub round_sizes: Vec<usize>,
    pub selection: SelectionMode,
}

/// One stepwise round: the table it ranked with and what it removed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepwiseRound {
    pub round: usize,
    pub table: EasinessTable,
    pub removed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub plan: AblationPlan,
    pub removed: ExampleSubset,
    pub retained: ExampleSubset,
    pub rounds: Vec<StepwiseRound>,
}

/// Everything a strategy may need: the easiness table of the full train set,
/// and the recipe to recompute easiness on a reduced set.
pub struct AblationContext<'a> {
    pub table: &'a EasinessTable,
    pub arch: &'a ArchitectureSpec,
    pub dataset: &'a Dataset,
    pub config: &'a TrainConfig,
    pub t_updates: u64,
    pub trials: usize,
    pub master_seed: u64,
    pub runner: &'a TrialRunner,
}

pub trait AblationStrategy: Send + Sync {
    fn name(&self) -> &str;

    /// Removes `⌊ratio · N⌋` train examples (`0 < ratio < 1`).
    fn ablate(&self, ctx: &AblationContext<'_>, ratio: f64, rng_seed: u64) -> Result<Ablation>;
}

pub fn validate_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(
            "ratio",
            format!("ablation ratio must lie in (0, 1), got {ratio}"),
        ))
    }
}

fn partition(
    all: &BTreeSet<String>,
    removed: BTreeSet<String>,
    rule: String,
) -> (ExampleSubset, ExampleSubset) {
    let retained = all.difference(&removed).cloned().collect();
    (
        ExampleSubset::new(SubsetKind::Removed, removed, rule.clone()),
        ExampleSubset::new(SubsetKind::Retained, retained, rule),
    )
}

/// Picks `k` ids of `table` for removal.
fn pick(
    table: &EasinessTable,
    weighting: RemovalWeighting,
    mode: SelectionMode,
    k: usize,
    rng_seed: u64,
) -> Result<BTreeSet<String>> {
    let indices = match mode {
        SelectionMode::Weighted => {
            let weights = removal_weights(table, weighting)?;
            let mut rng = rng::stream(rng_seed, Stream::Sampling);
            weighted_sample(&weights, k, &mut rng)?
        }
        SelectionMode::BottomK => {
            let mut order: Vec<usize> = (0..table.len()).collect();
            order.sort_by(|&a, &b| {
                let (ea, eb) = (&table.entries[a], &table.entries[b]);
                let by_value = ea.easiness.total_cmp(&eb.easiness);
                let by_value = match weighting {
                    RemovalWeighting::Hard => by_value.reverse(),
                    _ => by_value,
                };
                by_value.then_with(|| ea.example_id.cmp(&eb.example_id))
            });
            order.truncate(k);
            order
        }
    };
    Ok(indices
        .into_iter()
        .map(|i| table.entries[i].example_id.clone())
        .collect())
}

/// Removal in one shot from the full-set table.
pub struct OneShot {
    name: &'static str,
    weighting: RemovalWeighting,
}

impl OneShot {
    pub const EASY: OneShot = OneShot {
        name: "easy",
        weighting: RemovalWeighting::Easy,
    };
    pub const HARD: OneShot = OneShot {
        name: "hard",
        weighting: RemovalWeighting::Hard,
    };
    pub const RANDOM: OneShot = OneShot {
        name: "random",
        weighting: RemovalWeighting::Uniform,
    };
}

impl AblationStrategy for OneShot {
    fn name(&self) -> &str {
        self.name
    }

    fn ablate(&self, ctx: &AblationContext<'_>, ratio: f64, rng_seed: u64) -> Result<Ablation> {
        ablate_once(ctx.table, self.name, self.weighting, ratio, rng_seed)
    }
}

pub fn ablate_once(
    table: &EasinessTable,
    name: &str,
    weighting: RemovalWeighting,
    ratio: f64,
    rng_seed: u64,
) -> Result<Ablation> {
    validate_ratio(ratio)?;
    let k = fraction_count(ratio, table.len());
    let removed = pick(table, weighting, SelectionMode::Weighted, k, rng_seed)?;
    let rule = format!("{name} ratio {ratio} seed {rng_seed} on {}", table.table_id());
    let (removed, retained) = partition(&table.ids(), removed, rule);
    Ok(Ablation {
        plan: AblationPlan {
            strategy: name.to_owned(),
            target_ratio: ratio,
            rng_seed,
            round_sizes: vec![k],
            selection: SelectionMode::Weighted,
        },
        removed,
        retained,
        rounds: Vec::new(),
    })
}

/// Repeated easy-weighted removal of 10% of the original train set, with
/// easiness recomputed on what is left after every round.
///
/// Round 0 ranks with the full-set table and samples with `rng_seed`
/// itself, so a single round reproduces one-shot `easy` exactly. Round
/// `r > 0` trains with master seed `derive_seed(master, "stepwise", r)` and
/// samples with `derive_seed(rng_seed, "stepwise", r)`.
pub struct Stepwise {
    pub mode: SelectionMode,
}

impl Stepwise {
    pub fn rounds_for(ratio: f64) -> Result<usize> {
        validate_ratio(ratio)?;
        let rounds = (ratio / STEPWISE_ROUND_FRACTION).round();
        if (rounds * STEPWISE_ROUND_FRACTION - ratio).abs() > 1e-6 {
            return Err(Error::validation(
                "ratio",
                format!("stepwise ratios must be multiples of {STEPWISE_ROUND_FRACTION}, got {ratio}"),
            ));
        }
        Ok(rounds as usize)
    }
}

impl AblationStrategy for Stepwise {
    fn name(&self) -> &str {
        "stepwise"
    }

    fn ablate(&self, ctx: &AblationContext<'_>, ratio: f64, rng_seed: u64) -> Result<Ablation> {
        let rounds = Self::rounds_for(ratio)?;
        let all = ctx.table.ids();
        let round_size = fraction_count(STEPWISE_ROUND_FRACTION, all.len());
        let mut retained = all.clone();
        let mut history = Vec::with_capacity(rounds);
        for round in 0..rounds {
            let table = if round == 0 {
                ctx.table.clone()
            } else {
                let subset = ctx.dataset.restrict_train(&retained)?;
                let master = derive_seed(ctx.master_seed, "stepwise", round as u64);
                compute_easiness_at(
                    ctx.arch,
                    &subset,
                    ctx.config,
                    &[ctx.t_updates],
                    ctx.trials,
                    master,
                    ctx.runner,
                )
                .map_err(|e| Error::StepwiseRound {
                    round,
                    source: Box::new(e),
                })?
                .remove(0)
            };
            let seed = if round == 0 {
                rng_seed
            } else {
                derive_seed(rng_seed, "stepwise", round as u64)
            };
            let removed = pick(&table, RemovalWeighting::Easy, self.mode, round_size, seed)
                .map_err(|e| Error::StepwiseRound {
                    round,
                    source: Box::new(e),
                })?;
            for id in &removed {
                retained.remove(id);
            }
            log::info!(
                "stepwise round {round}: removed {}, {} remain",
                removed.len(),
                retained.len()
            );
            history.push(StepwiseRound {
                round,
                table,
                removed,
            });
        }
        let removed: BTreeSet<String> = history.iter().flat_map(|r| r.removed.clone()).collect();
        let rule = format!(
            "stepwise ratio {ratio} seed {rng_seed} ({rounds} rounds of {round_size}, {:?}) from {}",
            self.mode,
            ctx.table.table_id()
        );
        let (removed, retained) = partition(&all, removed, rule);
        Ok(Ablation {
            plan: AblationPlan {
                strategy: "stepwise".into(),
                target_ratio: ratio,
                rng_seed,
                round_sizes: vec![round_size; rounds],
                selection: self.mode,
            },
            removed,
            retained,
            rounds: history,
        })
    }
}

/// Strategies by name.
pub struct StrategyRegistry {
    strategies: BTreeMap<String, Box<dyn AblationStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    /// `easy`, `hard`, `random` and `stepwise` (in the given selection mode).
    pub fn with_builtins(stepwise: SelectionMode) -> Self {
        let mut registry = Self::empty();
        registry.register(Box::new(OneShot::EASY));
        registry.register(Box::new(OneShot::HARD));
        registry.register(Box::new(OneShot::RANDOM));
        registry.register(Box::new(Stepwise { mode: stepwise }));
        registry
    }

    /// Replaces any strategy registered under the same name.
    pub fn register(&mut self, strategy: Box<dyn AblationStrategy>) {
        self.strategies.insert(strategy.name().to_owned(), strategy);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&dyn AblationStrategy> {
        self.strategies.get(name).map(|s| s.as_ref()).ok_or_else(|| {
            Error::validation(
                "strategies",
                format!(
                    "unknown strategy {name:?}; known: {}",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_builtins(SelectionMode::Weighted)
    }
}
