use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compression::strategy::{
    Ablation, AblationContext, AblationPlan, SelectionMode, StepwiseRound, StrategyRegistry,
};
use crate::easiness::{ExampleSubset, SubsetKind};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub plan: AblationPlan,
    pub retained: ExampleSubset,
    pub removed: ExampleSubset,
    pub retrain_seeds: Vec<u64>,
    pub test_accuracy: Vec<f64>,
    /// Easiness table id and removal count of every stepwise round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<RoundSummary>,
}

impl CompressionResult {
    pub fn mean_accuracy(&self) -> f64 {
        self.test_accuracy.iter().sum::<f64>() / self.test_accuracy.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub table: String,
    pub retained_before: usize,
    pub removed: usize,
}

/// Results of a full grid, plus the per-round detail of stepwise plans.
#[derive(Debug, Clone)]
pub struct CompressionRun {
    pub results: Vec<CompressionResult>,
    /// `(strategy, ratio index)` → rounds, stepwise only.
    pub rounds: BTreeMap<(String, usize), Vec<StepwiseRound>>,
}

/// Sampling seed of one grid cell. It does not depend on the strategy, so
/// one-shot `easy` and a single stepwise round draw the same removals.
pub fn ablation_seed(master_seed: u64, ratio: f64) -> u64 {
    derive_seed(master_seed, "ablation", (ratio * 1e6).round() as u64)
}

/// For every strategy and ratio: build the retained set, retrain from scratch
/// once per seed and record the final test accuracy. Ratio 0 keeps the whole
/// train split.
pub fn run_compression_experiment(
    registry: &StrategyRegistry,
    strategies: &[String],
    ratios: &[f64],
    seeds: &[u64],
    ctx: &AblationContext<'_>,
) -> Result<CompressionRun> {
    if strategies.is_empty() || ratios.is_empty() {
        return Err(Error::validation("compression", "no strategies or ratios"));
    }
    if seeds.is_empty() {
        return Err(Error::validation("seeds", "need at least one retrain seed"));
    }
    for name in strategies {
        registry.get(name)?;
    }
    for &ratio in ratios {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::validation(
                "ratios",
                format!("ablation ratio must lie in [0, 1), got {ratio}"),
            ));
        }
    }
    let mut retrain_config = ctx.config.clone();
    retrain_config.checkpoint_updates.clear();

    let mut results = Vec::new();
    let mut all_rounds = BTreeMap::new();
    for name in strategies {
        let strategy = registry.get(name)?;
        for (ri, &ratio) in ratios.iter().enumerate() {
            let rng_seed = ablation_seed(ctx.master_seed, ratio);
            let ablation = if ratio == 0.0 {
                full_set(ctx, name, rng_seed)
            } else {
                strategy.ablate(ctx, ratio, rng_seed)?
            };
            check_partition(ctx, &ablation)?;
            let dataset = ctx.dataset.restrict_train(&ablation.retained.ids)?;
            let trials = ctx
                .runner
                .run_seeds(ctx.arch, &dataset, &retrain_config, seeds)?;
            let test_accuracy = trials
                .iter()
                .map(|t| {
                    t.record.final_test_accuracy().ok_or_else(|| {
                        Error::validation("dataset", "compression needs a nonempty test split")
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            log::info!(
                "{name} ratio {ratio}: retained {} accuracy {test_accuracy:?}",
                ablation.retained.len()
            );
            let mut retained_before = ablation.removed.len() + ablation.retained.len();
            let rounds = ablation
                .rounds
                .iter()
                .map(|r| {
                    let summary = RoundSummary {
                        round: r.round,
                        table: r.table.table_id(),
                        retained_before,
                        removed: r.removed.len(),
                    };
                    retained_before -= r.removed.len();
                    summary
                })
                .collect();
            if !ablation.rounds.is_empty() {
                all_rounds.insert((name.clone(), ri), ablation.rounds);
            }
            results.push(CompressionResult {
                plan: ablation.plan,
                retained: ablation.retained,
                removed: ablation.removed,
                retrain_seeds: seeds.to_vec(),
                test_accuracy,
                rounds,
            });
        }
    }
    Ok(CompressionRun {
        results,
        rounds: all_rounds,
    })
}

fn full_set(ctx: &AblationContext<'_>, name: &str, rng_seed: u64) -> Ablation {
    let rule = format!("{name} ratio 0 (full train split)");
    Ablation {
        plan: AblationPlan {
            strategy: name.to_owned(),
            target_ratio: 0.0,
            rng_seed,
            round_sizes: Vec::new(),
            selection: SelectionMode::Weighted,
        },
        removed: ExampleSubset::new(SubsetKind::Removed, Default::default(), rule.clone()),
        retained: ExampleSubset::new(SubsetKind::Retained, ctx.table.ids(), rule),
        rounds: Vec::new(),
    }
}

/// Retained and removed must partition the train split, and every stepwise
/// round may only remove what the previous round kept.
fn check_partition(ctx: &AblationContext<'_>, ablation: &Ablation) -> Result<()> {
    let train = ctx.dataset.train_ids();
    let broken = |why: String| Err(Error::Output(format!("{}: {why}", ablation.plan.strategy)));
    if !ablation.retained.ids.is_disjoint(&ablation.removed.ids) {
        return broken("retained and removed overlap".into());
    }
    if ablation.retained.len() + ablation.removed.len() != train.len()
        || !ablation.retained.ids.is_subset(&train)
        || !ablation.removed.ids.is_subset(&train)
    {
        return broken("retained and removed do not cover the train split".into());
    }
    let mut alive = train;
    for round in &ablation.rounds {
        if !round.removed.is_subset(&alive) {
            return broken(format!("round {} removed an already removed example", round.round));
        }
        if round.table.ids() != alive {
            return broken(format!("round {} ranked the wrong example set", round.round));
        }
        for id in &round.removed {
            alive.remove(id);
        }
    }
    Ok(())
}

/// `strategy,ratio,seed,test_accuracy`
pub fn curves_csv(results: &[CompressionResult]) -> String {
    let mut out = String::from("strategy,ratio,seed,test_accuracy\n");
    for r in results {
        for (seed, acc) in r.retrain_seeds.iter().zip(&r.test_accuracy) {
            let _ = writeln!(out, "{},{},{},{}", r.plan.strategy, r.plan.target_ratio, seed, acc);
        }
    }
    out
}
