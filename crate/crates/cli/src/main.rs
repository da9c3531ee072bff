use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

use hybridsde::{Error, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "hybridsde", version, about = "First-passage analysis of hybrid SDEs with state-dependent switching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the Monte Carlo seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// The hybrid SDE itself.
    Model,
    /// Its piecewise-constant grid approximation.
    Approximation,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Grid,
    Profiles,
    Coupling,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the model and report on its grid approximation.
    Validate(Common),
    /// Solve for exit probabilities and occupation times.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write the discretized chain (nodes and triplets).
        #[arg(long)]
        dump_chain: bool,
    },
    /// Monte Carlo estimates.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "model")]
        simulate: Target,
        /// Write fine trajectories of the first N paths.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
    },
    /// Solver against Monte Carlo, pass when within 3 standard errors.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "approximation")]
        simulate: Target,
    },
    /// Convergence and profile studies.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        kind: StudyKind,
    },
}

/// 1: I/O or parse, 2: validation, 3: numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        Error::Input { .. }
        | Error::StateOutOfRange { .. }
        | Error::Generator { .. }
        | Error::Grid(_)
        | Error::Trap { .. } => 2,
        Error::Numerical(_) | Error::Coupling(_) => 3,
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    if let Some(n) = common.workers {
        // A second initialization only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.mc.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<commands::Outcome, Error> {
    match cli.command {
        Command::Validate(c) => commands::validate(&load(&c)?, &c.out),
        Command::Solve { common, dump_chain } => commands::solve(&load(&common)?, &common.out, dump_chain),
        Command::Mc {
            common,
            simulate,
            dump_paths,
        } => commands::mc(&load(&common)?, &common.out, simulate, dump_paths),
        Command::Compare { common, simulate } => commands::compare(&load(&common)?, &common.out, simulate),
        Command::Study { common, kind } => commands::study(&load(&common)?, &common.out, kind),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Failed(code)) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
