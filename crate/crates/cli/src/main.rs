mod args;
mod commands;
mod file;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, Merge};
use commands::ResourceCap;

fn with_file<T>(flags: &T, cli: &Cli, command: &str) -> anyhow::Result<T>
where
    T: Merge + Clone + Default + serde::de::DeserializeOwned,
{
    match &cli.config {
        Some(path) => Ok(flags.clone().merge(file::load_section(path, command)?)),
        None => Ok(flags.clone()),
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    let name = cli.command.name();
    match &cli.command {
        Command::Smooth(a) => commands::smooth(&with_file(a, cli, name)?),
        Command::Calibrate(a) => commands::calibrate(&with_file(a, cli, name)?),
        Command::Weights(a) => commands::weights(&with_file(a, cli, name)?),
        Command::Experiment(a) => commands::experiment(&with_file(a, cli, name)?),
    }
}

/// 2 for bad input or configuration, 3 when the computation is infeasible,
/// 4 when a resource cap is hit.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ResourceCap>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<propsep::Error>() {
            return match e {
                propsep::Error::EmptySchedule { .. }
                | propsep::Error::CalibrationInfeasible { .. }
                | propsep::Error::VariabilityBoundViolated { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
