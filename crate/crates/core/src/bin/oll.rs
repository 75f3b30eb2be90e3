use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oll_core::datagen::export_dataset;
use oll_core::expcli::{
    build_world, compare, resolve_output, run_experiment, CompareThresholds, ExperimentConfig,
};
use oll_core::objective::Strategy;
use oll_core::plot::plot_tree;
use oll_core::Error;

/// Online lifelong learning lab: dual-encoder SIT/AIT experiments on
/// synthetic streams.
#[derive(Parser)]
#[command(name = "oll", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) pair of an experiment config.
    Run {
        /// TOML or JSON experiment config.
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory. Falls back to the config, then to
        /// `$OLL_OUTPUT_ROOT/<config stem>`, then `runs/<config stem>`.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Replace the config's seed list (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Replace the config's strategy list (repeatable).
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
    },
    /// Render SVG plots for a run directory or every run below a directory.
    Plot { dir: PathBuf },
    /// Compare two strategy directories seed by seed.
    Compare {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        min_last_gap: Option<f64>,
        #[arg(long)]
        min_win_fraction: Option<f64>,
        #[arg(long)]
        min_bias_ratio: Option<f64>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write the dataset a config would generate for one seed.
    GenDataset {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Run(Error),
    Checks,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig::load(path).map_err(Failure::Config)?;
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            output,
            seeds,
            strategies,
        } => {
            let mut cfg = load_config(&config)?;
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if !strategies.is_empty() {
                cfg.strategies = strategies;
            }
            cfg.validate().map_err(Failure::Config)?;
            let out = resolve_output(output.as_deref(), &cfg, &config);
            let summary = run_experiment(&cfg, &out)?;
            for s in &summary.strategies {
                let m = &s.stats;
                println!(
                    "{:<4} A_auc {:.4} ± {:.4}  A_last {:.4} ± {:.4}  bias {:.4} ± {:.4}",
                    s.strategy.name(),
                    m.a_auc.mean,
                    m.a_auc.std,
                    m.a_last.mean,
                    m.a_last.std,
                    m.new_class_bias.mean,
                    m.new_class_bias.std
                );
            }
            println!("wrote {}", out.join("summary.json").display());
        }
        Command::Plot { dir } => {
            for f in plot_tree(&dir)? {
                println!("{}", f.display());
            }
        }
        Command::Compare {
            left,
            right,
            min_last_gap,
            min_win_fraction,
            min_bias_ratio,
            json,
        } => {
            let mut t = CompareThresholds::default();
            if let Some(v) = min_last_gap {
                t.min_last_gap = v;
            }
            if let Some(v) = min_win_fraction {
                t.min_win_fraction = v;
            }
            if let Some(v) = min_bias_ratio {
                t.min_bias_ratio = v;
            }
            let report = compare(&left, &right, &t)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            } else {
                print!("{}", report.render());
            }
            if !report.passed() {
                return Err(Failure::Checks);
            }
        }
        Command::GenDataset { config, seed, output } => {
            let cfg = load_config(&config)?;
            let world = build_world(&cfg, seed)?;
            export_dataset(&world.dataset, &output)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Checks) => {
            eprintln!("comparison checks failed");
            ExitCode::from(1)
        }
    }
}
