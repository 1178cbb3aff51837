//! Command line pipelines over the detection library: generate synthetic
//! data, plant anomalies, train and score both detectors, and grade the
//! results. Every run hashes its inputs and effective configuration into a
//! manifest, and a manifest can be fed back as the configuration to
//! reproduce the run byte for byte.

mod commands;
mod config;
mod formats;
mod runfile;

pub use config::RunConfig;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Exit code for missing files, malformed inputs, or bad configuration.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for numerical failures inside a pipeline.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Numerical(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ctids_core::Error> for CliError {
    fn from(e: ctids_core::Error) -> CliError {
        use ctids_core::Error;
        match e {
            Error::ImpossibleEvidence | Error::Degeneracy | Error::Numerical(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ctids", about = "Continuous-time intrusion detection pipelines", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic traffic trace, optionally split into two files.
    GenTraffic(commands::gen::GenTrafficArgs),
    /// Sample a synthetic system call log.
    GenSyscalls(commands::gen::GenSyscallsArgs),
    /// Plant an anomaly in a traffic trace and record the ground truth.
    Inject(commands::gen::InjectArgs),
    /// Fit the traffic model to a trace with stochastic EM.
    TrainNids(commands::nids::TrainNidsArgs),
    /// Score a traffic trace window by window under a trained model.
    ScoreNids(commands::nids::ScoreNidsArgs),
    /// Fit the system call model to a log with exact EM.
    TrainHids(commands::hids::TrainHidsArgs),
    /// Score every process in a system call log under a trained model.
    ScoreHids(commands::hids::ScoreHidsArgs),
    /// Reference detectors: connection counts or call-window novelty.
    Baseline(commands::baseline::BaselineArgs),
    /// ROC curve and area under it from a score file plus ground truth.
    EvalRoc(commands::eval::EvalRocArgs),
    /// Attribute traces to hosts by which model scores them highest.
    HostId(commands::eval::HostIdArgs),
    /// Parse a model file and rewrite it in canonical form.
    ModelRoundtrip(commands::model::ModelRoundtripArgs),
}

/// Flags every command shares. Flag values override the configuration file.
#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file: key = value lines grouped in [sections].
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; every pseudo-random choice in a run flows from it.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

/// Parse and execute one command line (without the program name), returning
/// the process exit code.
pub fn run(args: &[&str]) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("ctids").chain(args.iter().copied())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenTraffic(args) => commands::gen::traffic(args),
        Command::GenSyscalls(args) => commands::gen::syscalls(args),
        Command::Inject(args) => commands::gen::inject(args),
        Command::TrainNids(args) => commands::nids::train(args),
        Command::ScoreNids(args) => commands::nids::score(args),
        Command::TrainHids(args) => commands::hids::train(args),
        Command::ScoreHids(args) => commands::hids::score(args),
        Command::Baseline(args) => commands::baseline::run(args),
        Command::EvalRoc(args) => commands::eval::roc(args),
        Command::HostId(args) => commands::eval::host_id(args),
        Command::ModelRoundtrip(args) => commands::model::roundtrip(args),
    }
}
