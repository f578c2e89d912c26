use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Lensless speckle-scanning ptychography.
///
/// Any configuration field can be overridden with a dotted flag, for example
/// `--trajectory.J 9` or `--recon.alpha_probe=0.4`.
#[derive(Debug, Parser)]
#[command(name = "speckle-ptycho", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a dataset with its ground truth.
    Simulate {
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Estimate per-frame speckle shifts by phase correlation.
    EstimateShifts {
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// `chain` or `reference`; overrides `registration.mode`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Recover the object and the speckle probe.
    Reconstruct(commands::ReconstructArgs),
    /// Compare a reconstruction with the ground truth.
    Evaluate(commands::EvaluateArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Usage(String),
    /// A numerical failure during computation.
    Runtime(String),
    /// An `--assert` threshold was not met.
    Assertion(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Assertion(m) => f.write_str(m),
        }
    }
}

impl From<speckle_ptycho::Error> for CliError {
    fn from(e: speckle_ptycho::Error) -> Self {
        use speckle_ptycho::Error as E;
        match e {
            E::NonFinite { .. } | E::Degenerate(_) | E::Registration { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn run() -> Result<(), CliError> {
    let (args, overrides) = config::split_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Err(CliError::Usage(String::new())) } else { Ok(()) };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.global.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = config::resolve(cli.global.config.as_deref(), &overrides, cli.global.seed)?;
    match cli.command {
        Command::Simulate { out } => commands::simulate(&config, &out),
        Command::EstimateShifts { dataset, out, mode } => commands::estimate_shifts(&config, &dataset, &out, mode.as_deref()),
        Command::Reconstruct(args) => commands::reconstruct(config, &args),
        Command::Evaluate(args) => commands::evaluate(&config, &args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string();
            if !text.is_empty() {
                eprintln!("error: {text}");
            }
            ExitCode::from(e.code())
        }
    }
}
