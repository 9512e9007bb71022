//! `rtm`: simulate data, run inversions and sweeps, and plot their outputs.

mod commands;
mod plot;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::ConfigError;

#[derive(Debug, Parser)]
#[command(name = "rtm", version, about = "Bayesian inversion of log-permeability from resin injection data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Axis {
    Sensors,
    Noise,
    Times,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw (or load) a truth and write synthetic observations.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `truth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured sampler on simulated or previously written data.
    Run {
        #[command(flatten)]
        common: Common,
        /// Overrides the sampler `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `repeats`.
        #[arg(long)]
        repeats: Option<usize>,
        /// Directory written by `simulate`; data are simulated in memory if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of a previous run whose first repeat serves as benchmark.
        #[arg(long)]
        benchmark: Option<PathBuf>,
    },
    /// Run a batch over one measurement axis and aggregate over repeats.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides the sampler `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// TOML sweep specification (`repeats` and an `[axis]` table).
        #[arg(long, conflicts_with = "axis")]
        sweep: Option<PathBuf>,
        /// Sweep an axis over its default values.
        #[arg(long, value_enum, required_unless_present = "sweep")]
        axis: Option<Axis>,
        /// Overrides the number of repeats per configuration.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Render SVG plots from the CSVs of a run or sweep directory.
    Plot {
        /// Directory written by `run` or `sweep`.
        #[arg(long)]
        input: PathBuf,
        /// Output directory (defaults to `<input>/plots`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common, seed } => commands::simulate(&common.config, &common.out, seed),
        Command::Run {
            common,
            seed,
            repeats,
            data,
            benchmark,
        } => commands::run(commands::RunArgs {
            config: common.config,
            out: common.out,
            workers: common.workers,
            seed,
            repeats,
            data,
            benchmark,
        }),
        Command::Sweep {
            common,
            seed,
            sweep,
            axis,
            repeats,
        } => {
            let axis = axis.map(|a| match a {
                Axis::Sensors => "sensors",
                Axis::Noise => "noise",
                Axis::Times => "times",
            });
            commands::sweep(commands::SweepArgs {
                config: common.config,
                out: common.out,
                workers: common.workers,
                seed,
                sweep,
                axis,
                repeats,
            })
        }
        Command::Plot { input, out } => {
            let out = out.unwrap_or_else(|| input.join("plots"));
            let mut stdout = std::io::stdout().lock();
            for file in plot::plot_dir(&input, &out)? {
                if writeln!(stdout, "{}", file.display()).is_err() {
                    break;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = if err.downcast_ref::<ConfigError>().is_some() {
                "config"
            } else {
                "runtime"
            };
            let report = serde_json::json!({
                "error": kind,
                "message": format!("{err:#}"),
            });
            eprintln!("{report}");
            ExitCode::from(if kind == "config" { 2 } else { 1 })
        }
    }
}
