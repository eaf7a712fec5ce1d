use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use easecore::cli::{self, RunOptions, Session};

#[derive(Parser)]
#[command(name = "easecore", version, about = "Easiness scoring, subset analysis and dataset compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trials trained in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Ignore and do not populate the trial cache.
    #[arg(long)]
    no_cache: bool,
    /// Overrides `easiness.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn session(&self) -> easecore::Result<Session> {
        let options = RunOptions {
            out: self.out.clone(),
            workers: self.workers,
            no_cache: self.no_cache,
            seed: self.seed,
        };
        Session::open(&self.config, &options)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the trials and write easiness tables.
    Easiness(Common),
    /// Matching rates, mean images and uniformity scores.
    Analyze(Common),
    /// Ablation strategies and retrained accuracies.
    Compress(Common),
    /// Generate a synthetic biased dataset.
    Synth {
        spec: PathBuf,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> easecore::Result<()> {
    match cli.command {
        Command::Easiness(common) => {
            let summary = cli::cmd_easiness(&common.session()?)?;
            for path in summary.tables {
                println!("{}", path.display());
            }
        }
        Command::Analyze(common) => {
            let summary = cli::cmd_analyze(&common.session()?)?;
            for notice in &summary.notices {
                println!("notice: {notice}");
            }
            for r in summary.cross_architecture.iter().chain(&summary.begin_end) {
                println!(
                    "{} {} T{}/T{}: {:.4} (chance {})",
                    r.pair, r.kind, r.t_a, r.t_b, r.rate, r.chance_rate
                );
            }
            for (arch, wins) in &summary.hard_more_diverse_classes {
                println!("{arch}: hard mean image more diverse than easy in {wins} classes");
            }
        }
        Command::Compress(common) => {
            let summary = cli::cmd_compress(&common.session()?)?;
            for r in &summary.results {
                println!(
                    "{} ratio {}: retained {}, mean test accuracy {:.4}",
                    r.plan.strategy,
                    r.plan.target_ratio,
                    r.retained.len(),
                    r.mean_accuracy()
                );
            }
        }
        Command::Synth { spec, out } => println!("{}", cli::cmd_synth(&spec, &out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
