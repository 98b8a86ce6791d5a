//! Command-line front end: simulate degraded pairs, restore them, calibrate
//! error bounds, and score the results.
//!
//! Exit codes are a stable contract: 0 success, 1 configuration error, 2 data
//! error (missing or malformed files, bad models), 3 numerical failure.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod files;
pub mod restore;
pub mod simulate;
pub mod tiling;
pub mod tools;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "satrestore", version, about = "Satellite image restoration with calibrated uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write target/degraded pairs through a forward model.
    Simulate(simulate::SimulateArgs),
    /// Restore a measurement.
    Restore(Box<restore::RestoreArgs>),
    /// Fit a calibration table from restorations with known ground truth.
    Calibrate(evaluate::CalibrateArgs),
    /// Per-image PSNR/SSIM/ICP and coverage curves.
    Evaluate(evaluate::EvaluateArgs),
    /// Gaussian PSF with a prescribed MTF at Nyquist.
    Psf(tools::PsfArgs),
    /// Autoencoder utilities.
    #[command(subcommand)]
    Cae(tools::CaeCommand),
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Restore(a) => restore::run(a),
        Command::Calibrate(a) => evaluate::run_calibrate(a),
        Command::Evaluate(a) => evaluate::run_evaluate(a),
        Command::Psf(a) => tools::run_psf(a),
        Command::Cae(c) => tools::run_cae(c),
    }
}

/// Parses `args` (program name first), runs the command, and returns the exit
/// code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
