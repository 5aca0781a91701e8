//! Batch front-end for `simplex-score`: simulate data, estimate
//! interaction graphs, evaluate recovery and test for group differences.

// `!(x >= 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use config::{Cli, Command};
use error::{CliError, CliResult};

/// Runs a parsed command line. Returns the error that decides the exit code.
pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let status = match &cli.command {
        Command::Simulate(a) => commands::simulate(a)?,
        Command::Estimate(a) => commands::estimate(a)?,
        Command::Eval(a) => commands::eval(a)?,
        Command::Difftest(a) => commands::difftest(a)?,
    };
    match status {
        commands::Status::Ok => Ok(()),
        commands::Status::NotConverged(msg) => Err(CliError::Numerical(msg)),
    }
}
