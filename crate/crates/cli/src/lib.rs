//! Command-line driver: config files, subcommands and output artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use conformer_nas::data_harness::Split;

pub use config::RunConfig;
pub use error::CliError;
use output::OutDir;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "CONFORMER_NAS_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "conformer-nas",
    version,
    about = "Conformer architecture search with a dynamic search schedule"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file; defaults apply to missing keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory; wins over the environment and the config file.
    #[arg(long, value_name = "DIR", env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Training epochs of this command.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bilevel architecture search over the supernet.
    Search {
        #[command(flatten)]
        run: RunArgs,
        /// Update the architecture on every step (plain alternating DARTS).
        #[arg(long)]
        force_one_step: bool,
    },
    /// Train a genotype from scratch.
    Retrain {
        #[arg(long, value_name = "PATH")]
        genotype: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train uniformly sampled genotypes and select the best.
    RandomSearch {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "N")]
        trials: Option<usize>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "valid")]
        split: Split,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the number of architectures in the search space.
    CountSpace {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print the final mixing weights of a search log.
    InspectAlpha {
        #[arg(value_name = "SEARCH_LOG")]
        log: PathBuf,
    },
    /// Search with and without the dynamic schedule and report both.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
}

pub fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::parse(&read_config(path)?).map_err(|e| {
            CliError::Config(format!(
                "{}: {}",
                path.display(),
                e.to_string().trim_start_matches("config error: ")
            ))
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))
}

enum Epochs {
    Search,
    Retrain,
    Random,
}

fn prepare(run: &RunArgs, which: Epochs) -> Result<(RunConfig, OutDir), CliError> {
    let mut cfg = load_config(&run.config)?;
    if let Some(out) = &run.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = run.epochs {
        match which {
            Epochs::Search => cfg.search_epochs = n,
            Epochs::Retrain => cfg.retrain_epochs = n,
            Epochs::Random => cfg.random_epochs = n,
        }
    }
    cfg.validate()?;
    let out = OutDir::create(&cfg.out_dir)?;
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Search {
            run,
            force_one_step,
        } => {
            let (mut cfg, out) = prepare(&run, Epochs::Search)?;
            cfg.force_one |= force_one_step;
            commands::cmd_search(&cfg, &out)
        }
        Command::Retrain { genotype, run } => {
            let (cfg, out) = prepare(&run, Epochs::Retrain)?;
            commands::cmd_retrain(&cfg, &genotype, &out)
        }
        Command::RandomSearch { run, trials } => {
            let (mut cfg, out) = prepare(&run, Epochs::Random)?;
            if let Some(t) = trials {
                cfg.random_trials = t;
                cfg.validate()?;
            }
            commands::cmd_random_search(&cfg, &out)
        }
        Command::Eval {
            checkpoint,
            split,
            config,
        } => commands::cmd_eval(&load_config(&config)?, &checkpoint, split),
        Command::CountSpace { config } => commands::cmd_count_space(&load_config(&config)?),
        Command::InspectAlpha { log } => commands::cmd_inspect_alpha(&log),
        Command::Compare { run } => {
            let (cfg, out) = prepare(&run, Epochs::Search)?;
            commands::cmd_compare(&cfg, &out)
        }
    }
}
