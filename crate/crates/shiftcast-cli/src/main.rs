//! `shiftcast` — train, evaluate, explain, and sweep covariate-shifting
//! forecast models from a single TOML config file.
//!
//! Exit codes: 0 success, 1 any runtime error (bad data, shape mismatch,
//! out-of-range index, ...), 2 config file or usage parse failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_index_list, parse_skip, IndexSelection, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "shiftcast",
    version,
    about = "Time-series forecasting with future-covariate shifting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts; each overrides the matching config value.
#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the run seed (the generator seed for `synth`).
    #[arg(long)]
    seed: Option<u64>,
    /// Force single-threaded execution; pins the schedule as well as the
    /// (already deterministic) numbers.
    #[arg(long)]
    deterministic: bool,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model; writes checkpoint.prcn and train_report.txt.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the covariate shift length.
        #[arg(long)]
        shift: Option<usize>,
        /// Override the layer count (widths halve from the first layer).
        #[arg(long)]
        layers: Option<usize>,
        /// Override the skip strategy (once, dense, chain, input_to_all, none).
        #[arg(long, value_parser = parse_skip)]
        skip: Option<shiftcast::model::SkipStrategy>,
    },
    /// Score a checkpoint on the test split; writes metrics.txt.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to score (default: <out_dir>/checkpoint.prcn).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Attribute a forecast onto its input window; writes saliency.txt and
    /// saliency_raw.txt.
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint to explain (default: <out_dir>/checkpoint.prcn).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Test-set instance index to attribute.
        #[arg(long, default_value_t = 0)]
        instance: usize,
        /// Target columns to include: comma-separated indices or `all`.
        #[arg(long, default_value = "all", value_parser = parse_index_list)]
        targets: IndexSelection,
        /// Horizon steps to include: comma-separated indices or `all`.
        #[arg(long, default_value = "all", value_parser = parse_index_list)]
        horizons: IndexSelection,
    },
    /// Run the sweep described by [sweep]; writes sweep_<kind>.txt files.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate the synthetic dataset; writes synth.csv.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Explain { common, .. }
            | Command::Sweep { common }
            | Command::Synth { common } => common,
        }
    }
}

fn run(command: &Command) -> Result<(), shiftcast::Error> {
    let common = command.common();
    let mut config = match RunConfig::load(&common.config) {
        Ok(config) => config,
        Err(failure) => {
            eprintln!("error: {failure}");
            std::process::exit(2);
        }
    };
    let mut overrides = Overrides {
        seed: common.seed,
        deterministic: common.deterministic,
        out: common.out.clone(),
        ..Overrides::default()
    };
    if let Command::Train {
        shift,
        layers,
        skip,
        ..
    } = command
    {
        overrides.shift = *shift;
        overrides.layers = *layers;
        overrides.skip = *skip;
    }
    if let Command::Synth { .. } = command {
        // The only randomness in `synth` is the generator's, so --seed
        // points there instead of at model initialization.
        if let Some(seed) = common.seed {
            config.data.seed = seed;
            overrides.seed = None;
        }
    }
    config.apply(&overrides)?;

    match command {
        Command::Train { .. } => commands::cmd_train(&config),
        Command::Eval { checkpoint, .. } => commands::cmd_eval(&config, checkpoint),
        Command::Explain {
            checkpoint,
            instance,
            targets,
            horizons,
            ..
        } => commands::cmd_explain(
            &config,
            checkpoint,
            *instance,
            targets.0.clone(),
            horizons.0.clone(),
        ),
        Command::Sweep { .. } => commands::cmd_sweep(&config),
        Command::Synth { .. } => commands::cmd_synth(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
