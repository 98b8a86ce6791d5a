//! Small utility commands: `psf` and `cae inspect`.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use satrestore::cae::load_cae;
use satrestore::forward::{measure_mtf, psf_from_mtf, MtfSpec};
use satrestore::io::write_kernel;

use crate::error::CliResult;
use crate::files;

#[derive(Debug, Clone, Args)]
pub struct PsfArgs {
    /// MTF at the Nyquist frequency, in (0, 1).
    #[arg(long)]
    pub mtf: f64,
    /// Odd kernel edge length.
    #[arg(long, default_value_t = 9)]
    pub size: usize,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run_psf(args: &PsfArgs) -> CliResult<()> {
    let kernel = psf_from_mtf(&MtfSpec {
        mtf_at_nyquist: args.mtf,
        kernel_size: args.size,
    })?;
    files::ensure_parent(&args.output)?;
    write_kernel(&args.output, &kernel)?;
    let (mx, my) = measure_mtf(&kernel);
    println!(
        "{}x{} kernel, measured MTF at Nyquist {mx:.6} (x) {my:.6} (y) -> {}",
        args.size,
        args.size,
        args.output.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Subcommand)]
pub enum CaeCommand {
    /// Load a CAE manifest and print the per-layer shapes at its reference size.
    Inspect {
        #[arg(long)]
        manifest: PathBuf,
    },
}

pub fn run_cae(cmd: &CaeCommand) -> CliResult<()> {
    match cmd {
        CaeCommand::Inspect { manifest } => {
            let model = load_cae(manifest)?;
            let r = model.reference_shape;
            println!("reference image {}x{}x{}", r.0, r.1, r.2);
            let nets = [
                &model.encoder,
                &model.decoder,
                &model.variance_decoder,
                &model.hyper_encoder,
                &model.hyper_decoder,
            ];
            for ((role, layers), net) in model.shape_report()?.iter().zip(nets) {
                println!("{role} ({} parameters)", net.parameter_count());
                for (name, s) in layers {
                    println!("  {name:<28} {}x{}x{}", s.0, s.1, s.2);
                }
            }
            Ok(())
        }
    }
}
