use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    average_image, begin_end_matching, cross_architecture_matching, random_subset,
    reports_csv, uniformity_score, MatchingReport, MeanImage,
};
use crate::arch::ArchitectureSpec;
use crate::cli::config::ExperimentConfig;
use crate::cli::plots;
use crate::compression::{
    curves_csv, run_compression_experiment, AblationContext, CompressionResult, StrategyRegistry,
};
use crate::data::{self, Dataset, Split, SyntheticBiasSpec};
use crate::easiness::{
    select_extremes, tables_from_trials, trial_seeds, EasinessTable, ExampleSubset, Extreme, SubsetKind,
};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::derive_seed;
use crate::trainer::{RunCache, TrialRunner, CACHE_ENV};

pub const RUN_FILE: &str = "easecore-run.json";

/// Command-line overrides shared by every experiment command.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub no_cache: bool,
    pub seed: Option<u64>,
}

/// JSON output stamped with the generating config hash.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    inner: &'a T,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    config_hash: String,
    config: ExperimentConfig,
}

/// A validated config bound to its dataset, output directory and runner.
pub struct Session {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub out: PathBuf,
    pub dataset: Dataset,
    pub archs: Vec<ArchitectureSpec>,
    pub runner: TrialRunner,
}

impl Session {
    pub fn open(config_path: &Path, options: &RunOptions) -> Result<Self> {
        let config = ExperimentConfig::load(config_path)?;
        Self::from_config(config, options)
    }

    pub fn from_config(mut config: ExperimentConfig, options: &RunOptions) -> Result<Self> {
        if let Some(seed) = options.seed {
            config.easiness.master_seed = seed;
        }
        if let Some(out) = &options.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        let config_hash = config.hash();
        let out = config.output_dir.clone();
        claim_output_dir(&out, &config, &config_hash)?;

        let dataset = config.load_dataset()?;
        let archs = config.architecture_specs(&dataset);
        let cache = (!options.no_cache).then(|| {
            let root = std::env::var_os(CACHE_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| out.join("cache"));
            RunCache::new(root)
        });
        Ok(Self {
            config,
            config_hash,
            out,
            dataset,
            archs,
            runner: TrialRunner::new(cache, options.workers),
        })
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        io::write_json(
            path,
            &Stamped {
                config_hash: &self.config_hash,
                inner: value,
            },
        )
    }

    /// Trains (or loads) every architecture's trials and writes one table per
    /// architecture and update count, plus each trial's record and metrics.
    pub fn easiness_tables(&self) -> Result<Vec<BTreeMap<u64, EasinessTable>>> {
        let e = &self.config.easiness;
        let ts = self.config.all_t();
        let seeds = trial_seeds(e.master_seed, e.trials);
        let mut all = Vec::with_capacity(self.archs.len());
        for arch in &self.archs {
            log::info!("{}: {} trials", arch.label(), seeds.len());
            let results = self
                .runner
                .run_seeds(arch, &self.dataset, &self.config.train, &seeds)?;
            let runs_dir = self.out.join("runs").join(arch.label());
            for r in &results {
                let stem = format!("seed-{}", r.record.seed);
                self.write_json(&runs_dir.join(format!("{stem}.json")), &r.record)?;
                io::write_atomic(
                    &runs_dir.join(format!("{stem}.metrics.csv")),
                    r.record.metrics_csv().as_bytes(),
                )?;
            }
            let tables = tables_from_trials(&self.dataset, arch, &ts, &seeds, &results)?;
            let mut by_t = BTreeMap::new();
            for table in tables {
                let path = self.table_path(&table);
                table.save(&path, Some(self.config_hash.clone()))?;
                by_t.insert(table.t_updates, table);
            }
            all.push(by_t);
        }
        Ok(all)
    }

    pub fn table_path(&self, table: &EasinessTable) -> PathBuf {
        self.out
            .join("easiness")
            .join(format!("{}.T{}.csv", table.architecture, table.t_updates))
    }
}

/// Records `config_hash` as the owner of `out`, refusing directories that
/// hold outputs of a different config.
fn claim_output_dir(out: &Path, config: &ExperimentConfig, config_hash: &str) -> Result<()> {
    let path = out.join(RUN_FILE);
    if path.exists() {
        let existing: RunFile = io::read_json(&path)?;
        if existing.config_hash != config_hash {
            return Err(Error::Output(format!(
                "{} holds outputs of config {}, not {config_hash}; choose another --out",
                out.display(),
                existing.config_hash
            )));
        }
        return Ok(());
    }
    io::write_json(
        &path,
        &RunFile {
            config_hash: config_hash.to_owned(),
            config: config.clone(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EasinessSummary {
    pub tables: Vec<PathBuf>,
}

pub fn cmd_easiness(session: &Session) -> Result<EasinessSummary> {
    let tables = session.easiness_tables()?;
    Ok(EasinessSummary {
        tables: tables
            .iter()
            .flat_map(|by_t| by_t.values().map(|t| session.table_path(t)))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityRow {
    pub architecture: String,
    pub t_updates: u64,
    pub class: String,
    pub kind: String,
    pub count: usize,
    pub uniformity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub cross_architecture: Vec<MatchingReport>,
    pub begin_end: Vec<MatchingReport>,
    pub uniformity: Vec<UniformityRow>,
    /// Per architecture: number of classes whose hard-set mean image scores
    /// lower (more diverse) than the easy-set one.
    pub hard_more_diverse_classes: BTreeMap<String, usize>,
    pub mean_images: usize,
    pub notices: Vec<String>,
}

fn class_subsets(
    class_table: &EasinessTable,
    fraction: f64,
    master_seed: u64,
    class: usize,
) -> Result<[ExampleSubset; 3]> {
    Ok([
        select_extremes(class_table, fraction, Extreme::Easy)?,
        select_extremes(class_table, fraction, Extreme::Hard)?,
        random_subset(
            &class_table.ids(),
            fraction,
            derive_seed(master_seed, "random-subset", class as u64),
        ),
    ])
}

pub fn cmd_analyze(session: &Session) -> Result<AnalysisSummary> {
    let tables = session.easiness_tables()?;
    let config = &session.config;
    let fraction = config.analysis.fraction;
    let dir = session.out.join("analysis");
    let mut notices = Vec::new();

    let mut cross = Vec::new();
    if tables.len() < 2 {
        notices.push(
            "only one architecture configured: cross-architecture matching omitted".to_owned(),
        );
    } else {
        for &t in &config.easiness.t_updates {
            let at_t: Vec<&EasinessTable> = tables.iter().map(|by_t| &by_t[&t]).collect();
            for kind in Extreme::BOTH {
                cross.extend(cross_architecture_matching(&at_t, fraction, kind)?);
            }
        }
        plots::matching_vs_t(&dir.join("matching_vs_T.svg"), &cross, fraction)?;
    }

    let mut begin_end = Vec::new();
    match config.analysis.begin_end {
        Some([early, late]) => {
            for by_t in &tables {
                for kind in Extreme::BOTH {
                    begin_end.push(begin_end_matching(&by_t[&early], &by_t[&late], fraction, kind)?);
                }
            }
        }
        None => notices.push("analysis.begin_end not set: begin/end matching omitted".to_owned()),
    }
    let mut all_reports = cross.clone();
    all_reports.extend(begin_end.iter().cloned());
    io::write_atomic(&dir.join("matching.csv"), reports_csv(&all_reports).as_bytes())?;

    let image_t = config.image_t();
    let mut uniformity = Vec::new();
    let mut hard_more_diverse = BTreeMap::new();
    let mut mean_images = 0;
    for by_t in &tables {
        let table = &by_t[&image_t];
        let image_dir = dir.join("mean_images").join(&table.architecture);
        let mut wins = 0;
        for class in 0..session.dataset.num_classes() {
            // Subsets are drawn within the class so every image averages the
            // same number of examples.
            let class_table = table.for_class(class);
            let subsets = match class_subsets(&class_table, fraction, config.easiness.master_seed, class) {
                Ok(subsets) => subsets,
                Err(e) => {
                    notices.push(format!("{} class {class}: {e}", table.architecture));
                    continue;
                }
            };
            let mut scores = Vec::new();
            for subset in &subsets {
                let image: MeanImage = match average_image(&session.dataset, subset, class) {
                    Ok(image) => image,
                    Err(e) => {
                        notices.push(format!("{}: {e}", table.architecture));
                        continue;
                    }
                };
                image.save_png(&image_dir.join(image.file_name()))?;
                mean_images += 1;
                let score = uniformity_score(&image);
                scores.push((subset.kind, score));
                uniformity.push(UniformityRow {
                    architecture: table.architecture.clone(),
                    t_updates: table.t_updates,
                    class: image.class_name.clone(),
                    kind: image.kind.to_string(),
                    count: image.count,
                    uniformity: score,
                });
            }
            let score_of = |k| scores.iter().find(|(kind, _)| *kind == k).map(|(_, s)| *s);
            if let (Some(easy), Some(hard)) = (
                score_of(SubsetKind::Easy),
                score_of(SubsetKind::Hard),
            ) {
                if hard < easy {
                    wins += 1;
                }
            }
        }
        hard_more_diverse.insert(table.architecture.clone(), wins);
    }
    let mut csv = String::from("architecture,T,class,kind,count,uniformity\n");
    for r in &uniformity {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.4}\n",
            r.architecture, r.t_updates, r.class, r.kind, r.count, r.uniformity
        ));
    }
    io::write_atomic(&dir.join("uniformity.csv"), csv.as_bytes())?;

    let summary = AnalysisSummary {
        cross_architecture: cross,
        begin_end,
        uniformity,
        hard_more_diverse_classes: hard_more_diverse,
        mean_images,
        notices,
    };
    session.write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionSummary {
    pub results: Vec<CompressionResult>,
}

fn ratio_tag(strategy: &str, ratio: f64) -> String {
    format!("{strategy}_r{ratio}")
}

pub fn cmd_compress(session: &Session) -> Result<CompressionSummary> {
    let config = &session.config;
    let c = &config.compression;
    let tables = session.easiness_tables()?;
    let t = config.compression_t();
    let table = &tables[c.architecture][&t];
    let ctx = AblationContext {
        table,
        arch: &session.archs[c.architecture],
        dataset: &session.dataset,
        config: &config.train,
        t_updates: t,
        trials: config.easiness.trials,
        master_seed: config.easiness.master_seed,
        runner: &session.runner,
    };
    let registry = StrategyRegistry::with_builtins(c.stepwise_selection);
    let run = run_compression_experiment(&registry, &c.strategies, &c.ratios, &c.seeds, &ctx)?;

    let dir = session.out.join("compression");
    for r in &run.results {
        let tag = ratio_tag(&r.plan.strategy, r.plan.target_ratio);
        io::write_atomic(
            &dir.join("retained").join(format!("{tag}.txt")),
            r.retained.to_lines().as_bytes(),
        )?;
    }
    for ((strategy, ri), rounds) in &run.rounds {
        let round_dir = dir.join("stepwise").join(ratio_tag(strategy, c.ratios[*ri]));
        for round in rounds {
            round
                .table
                .save(&round_dir.join(format!("round{}.csv", round.round)), Some(session.config_hash.clone()))?;
            let removed: String = round.removed.iter().map(|id| format!("{id}\n")).collect();
            io::write_atomic(
                &round_dir.join(format!("round{}_removed.txt", round.round)),
                removed.as_bytes(),
            )?;
        }
    }
    io::write_atomic(&dir.join("curves.csv"), curves_csv(&run.results).as_bytes())?;
    plots::accuracy_vs_ratio(&dir.join("accuracy_vs_ratio.svg"), &run.results)?;
    let summary = CompressionSummary {
        results: run.results,
    };
    session.write_json(&dir.join("results.json"), &summary)?;
    Ok(summary)
}

/// Generates a synthetic biased dataset from a spec file into `out`.
pub fn cmd_synth(spec_path: &Path, out: &Path) -> Result<String> {
    let spec: SyntheticBiasSpec = io::read_json(spec_path)?;
    let generated = data::generate_biased_dataset(&spec)?;
    data::synthetic::save_synthetic(&generated, out)?;
    let n_train = generated.dataset.split_len(Split::Train);
    Ok(format!(
        "{}: {n_train} train / {} test examples written to {}",
        generated.dataset.id(),
        generated.dataset.split_len(Split::Test),
        out.display()
    ))
}
