use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmwb_cli::{execute, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "gmwb", version, about = "Price, calibrate and simulate GMWB variable annuities")]
struct Args {
    /// TOML run configuration; defaults to the base case when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulation seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Value each cell at its configured or fair fee.
    Price,
    /// Calibrate the fair fee of each cell.
    FairFee,
    /// Export optimal-withdrawal ratio surfaces.
    Policy {
        /// Withdrawal dates, overriding the configuration.
        #[arg(long, value_delimiter = ',')]
        dates: Option<Vec<usize>>,
    },
    /// Simulate withdrawal behaviour under the optimal policy.
    Simulate,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    let command = match args.command {
        Sub::Price => Command::Price,
        Sub::FairFee => Command::FairFee,
        Sub::Policy { dates } => {
            if let Some(dates) = dates {
                cfg.policy.dates = dates;
            }
            Command::Policy
        }
        Sub::Simulate => Command::Simulate,
    };
    cfg.validate()?;
    if command == Command::Policy {
        cfg.validate_dates()?;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let files = execute(command, &cfg, &cfg.output.dir)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmwb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
