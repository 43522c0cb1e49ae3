//! Command-line front end for the sparse-histogram accounting library.
//!
//! Exit codes: 0 success, 2 usage error, 3 domain error (invalid parameters,
//! infeasible calibration, failed verification), 4 I/O error.

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gshm::GshmError;

mod commands;
mod config;
mod output;

use commands::{CalibrateArgs, CasestudyArgs, CurveArgs, DeltaArgs, RunArgs, VerifyArgs};

#[derive(Debug)]
pub(crate) enum CliError {
    /// Bad invocation: missing or contradictory flags.
    Usage(String),
    /// Valid invocation, but the numbers do not work out.
    Domain(String),
    /// Filesystem or serialization trouble.
    Io(String),
}

pub(crate) type CliResult<T> = Result<T, CliError>;

impl From<GshmError> for CliError {
    fn from(e: GshmError) -> Self {
        match e {
            GshmError::InvalidInput(_)
            | GshmError::ToleranceNotReached(_)
            | GshmError::InternalConsistency(_) => CliError::Domain(e.to_string()),
            GshmError::Parse(_) | GshmError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "gshm",
    version,
    about = "Privacy accounting and release tool for thresholded Gaussian histograms"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Evaluate delta at a fixed epsilon under one or all accountings.
    Delta(DeltaArgs),
    /// Solve for the threshold gap, the noise scale, or epsilon.
    Calibrate(CalibrateArgs),
    /// Tabulate exact and add-the-deltas over an epsilon grid.
    Curve(CurveArgs),
    /// Execute the mechanism over grouped records and write the release.
    Run(RunArgs),
    /// Cross-check the accounting against a Monte-Carlo loss sampler.
    Verify(VerifyArgs),
    /// Reproduce the reference calibration scenarios end to end.
    Casestudy(CasestudyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Delta(args) => commands::cmd_delta(args),
        Cmd::Calibrate(args) => commands::cmd_calibrate(args),
        Cmd::Curve(args) => commands::cmd_curve(args),
        Cmd::Run(args) => commands::cmd_run(args),
        Cmd::Verify(args) => commands::cmd_verify(args),
        Cmd::Casestudy(args) => commands::cmd_casestudy(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(4)
        }
    }
}
