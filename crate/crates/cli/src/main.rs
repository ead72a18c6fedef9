//! `afc-dlcz`: simulate record streams, analyse them, evaluate the
//! cross-correlation model and run parameter sweeps.

mod commands;
mod error;
mod grid;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use error::{exit, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "afc-dlcz", version, about = "Multimode AFC photon-pair source simulator and analyser")]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, env = "AFC_DLCZ_THREADS", global = true)]
    threads: Option<usize>,

    /// Echo the resolved configuration on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Config file (`key = value` lines) or a run manifest.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Analysis bin width in ns; overrides `bin_ns`.
    #[arg(long, value_name = "U32")]
    pub bin_ns: Option<u32>,

    /// Overrides one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct AnalysisArgs {
    /// Accidental-coincidence estimator.
    #[arg(long, value_enum, default_value_t = Accidentals::InterTrial)]
    pub accidentals: Accidentals,

    /// Trial offsets paired for the inter-trial background.
    #[arg(long, default_value_t = 10)]
    pub offsets: u32,

    /// Pair every Stokes with every anti-Stokes detection, or only the first of each.
    #[arg(long, value_enum, default_value_t = Pairing::All)]
    pub pairing: Pairing,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Binary,
    Text,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Accidentals {
    InterTrial,
    Analytic,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    All,
    First,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trials and write a record stream with its manifest.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "U64")]
        trials: u64,
        #[arg(long, default_value_t = 0, value_name = "U64")]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
        /// Also write the generated ground truth as JSON.
        #[arg(long, value_name = "PATH")]
        truth: Option<PathBuf>,
    },
    /// Analyse a record stream into histogram, correlation and summary files.
    Analyze {
        /// Record file (binary or text).
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Output prefix.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Trials in the run; read from the input manifest when omitted.
        #[arg(long, value_name = "U64")]
        trials: Option<u64>,
    },
    /// Evaluate the cross-correlation model on a p_s grid.
    Model {
        #[command(flatten)]
        config: ConfigArgs,
        /// `start:stop:count` or a comma-separated list.
        #[arg(long, value_name = "GRID")]
        grid: String,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Simulate and analyse each point of a parameter axis.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// `key=GRID`, e.g. `p_s=0.0005:0.02:8`.
        #[arg(long, value_name = "KEY=GRID")]
        axis: String,
        /// Trials per point.
        #[arg(long, value_name = "U64")]
        trials: u64,
        /// Seed of the first point; point i uses seed + i.
        #[arg(long, default_value_t = 0, value_name = "U64")]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start {n} worker threads: {e}")))?;
    }
    let verbose = cli.verbose;
    match cli.command {
        Command::Simulate {
            config,
            trials,
            seed,
            out,
            format,
            truth,
        } => commands::simulate(&config, trials, seed, &out, format, truth.as_deref(), verbose),
        Command::Analyze {
            input,
            config,
            analysis,
            out,
            trials,
        } => commands::analyze(&input, &config, &analysis, &out, trials, verbose),
        Command::Model { config, grid, out } => commands::model(&config, &grid, &out, verbose),
        Command::Sweep {
            config,
            analysis,
            axis,
            trials,
            seed,
            out,
        } => commands::sweep(&config, &analysis, &axis, trials, seed, &out, verbose),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afc-dlcz: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
