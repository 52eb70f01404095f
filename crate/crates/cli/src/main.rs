use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use harmsim::commands::{self, StabilityArgs};
use harmsim::config::{CliOverrides, Method, ResolvedConfig, RunConfig};
use harmsim_core::error::Result;

/// Deterministic federated-learning simulator for multi-site feature
/// harmonisation.
#[derive(Parser)]
#[command(name = "harmsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every source of randomness in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated site ids that hold task labels (default: all).
    #[arg(long = "labeled-sites", value_delimiter = ',')]
    labeled_sites: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-site benchmark as per-site CSV files.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one method and write checkpoint, round log, and metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Method preset.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Run several methods on identical data and seed, then tabulate.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Method to include (repeat the flag; at least two).
        #[arg(long = "method", value_enum)]
        methods: Vec<Method>,
    },
    /// Fit-stability experiment: Gaussian vs Box-Cox mean estimates.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Checkpoint whose extractor provides the features.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Site whose training features are analysed (default: largest).
        #[arg(long)]
        site: Option<String>,
        /// Feature column of the embedding to analyse.
        #[arg(long, default_value_t = 0)]
        feature_index: usize,
        /// Raw feature values from a CSV instead of a checkpoint.
        #[arg(long)]
        features_csv: Option<PathBuf>,
        /// Column name in --features-csv (default: first column).
        #[arg(long)]
        column: Option<String>,
        /// Subsample sizes.
        #[arg(long, value_delimiter = ',', default_values_t = vec![5, 10, 20, 30, 50, 100])]
        sizes: Vec<usize>,
        /// Mean estimates per sample size.
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        /// Subsample without replacement.
        #[arg(long)]
        no_replacement: bool,
    },
}

fn resolve(common: &Common, method: Option<Method>) -> Result<ResolvedConfig> {
    let file = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = CliOverrides {
        seed: common.seed,
        method,
        labeled_sites: common.labeled_sites.clone(),
        out: common.out.clone(),
    };
    ResolvedConfig::resolve(file, &overrides)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let resolved = resolve(&common, None)?;
            commands::cmd_generate(&resolved)
        }
        Command::Train { common, method } => {
            let resolved = resolve(&common, method)?;
            commands::cmd_train(&resolved).map(|_| ())
        }
        Command::Compare { common, methods } => {
            let resolved = resolve(&common, None)?;
            commands::cmd_compare(&resolved, &methods).map(|_| ())
        }
        Command::Stability {
            common,
            checkpoint,
            site,
            feature_index,
            features_csv,
            column,
            sizes,
            repeats,
            no_replacement,
        } => {
            let resolved = resolve(&common, None)?;
            let args = StabilityArgs {
                checkpoint,
                site,
                feature_index,
                features_csv,
                column,
                sample_sizes: sizes,
                repeats,
                with_replacement: !no_replacement,
            };
            commands::cmd_stability(&resolved, &args).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err) as u8)
        }
    }
}
