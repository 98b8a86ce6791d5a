//! `calibrate` and `evaluate`: both pair a ground-truth directory with a
//! directory of restorations, matched by name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use satrestore::uncertainty::{
    apply_calibration, calibrate_with, coverage_csv, coverage_curve_pooled, coverage_svg,
    default_alphas, icp, psnr, ssim, CalibrationTable, CoverageInput, DEFAULT_BINS,
    DEFAULT_MIN_OCCUPANCY,
};
use satrestore::ImageGrid;

use crate::error::{CliError, CliResult};
use crate::files;

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// Ground-truth rasters.
    #[arg(long)]
    pub truth: PathBuf,
    /// Restorations: `<name>.<ext>` (MMSE) and `<name>.std.<ext>` per truth file.
    #[arg(long)]
    pub restored: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_OCCUPANCY)]
    pub min_occupancy: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub restored: PathBuf,
    /// Calibration table applied to `<name>.std.<ext>` to get the ICP bound.
    #[arg(long, conflicts_with = "bound")]
    pub calibration: Option<PathBuf>,
    /// Constant ICP bound.
    #[arg(long)]
    pub bound: Option<f64>,
    /// Peak signal for PSNR and SSIM.
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Metrics CSV. Coverage curves go next to it when samples are present.
    #[arg(long)]
    pub output: PathBuf,
}

struct Pair {
    name: String,
    truth: PathBuf,
    restored: PathBuf,
}

/// Matches every truth file to its restoration, listing all that are missing.
fn pair_up(truth_dir: &Path, restored_dir: &Path, extra: &[&str]) -> CliResult<Vec<Pair>> {
    let truths = files::truth_files(truth_dir)?;
    if truths.is_empty() {
        return Err(CliError::data(format!(
            "no ground-truth rasters in {}",
            truth_dir.display()
        )));
    }
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for t in truths {
        let name = files::truth_key(&t);
        match files::find_raster(restored_dir, &name) {
            Some(r) => {
                for suffix in extra {
                    let p = files::sibling(&r, suffix);
                    if !p.is_file() {
                        missing.push(p);
                    }
                }
                pairs.push(Pair {
                    name,
                    truth: t,
                    restored: r,
                });
            }
            None => missing.push(restored_dir.join(format!("{name}.*"))),
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::data(format!(
            "missing restored file(s): {}",
            list.join(", ")
        )));
    }
    Ok(pairs)
}

pub fn run_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let pairs = pair_up(&args.truth, &args.restored, &["std"])?;
    let mut data: Vec<(ImageGrid, ImageGrid)> = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let truth = files::read(&p.truth)?;
        let mmse = files::read(&p.restored)?;
        let std = files::read(&files::sibling(&p.restored, "std"))?;
        let err = mmse.zip_map(&truth, |m, t| m - t)?;
        data.push((std, err));
    }
    let table = calibrate_with(&data, args.alpha, args.bins, args.min_occupancy)?;
    files::ensure_parent(&args.output)?;
    table.save(&args.output)?;
    println!("calibrated {} image(s) at alpha = {}", pairs.len(), args.alpha);
    println!("bin  lower          upper          count      quantile");
    for b in 0..table.n_bins() {
        println!(
            "{b:<4} {:<14.6e} {:<14.6e} {:<10} {:.6e}",
            table.bin_edges[b],
            table.bin_edges[b + 1],
            table.counts[b],
            table.quantiles[b]
        );
    }
    Ok(())
}

pub fn run_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    if let Some(b) = args.bound {
        if !(b > 0.0) {
            return Err(CliError::config(format!("--bound must be positive, got {b}")));
        }
    }
    let table = args
        .calibration
        .as_ref()
        .map(CalibrationTable::load)
        .transpose()?;
    let extra: &[&str] = if table.is_some() { &["std"] } else { &[] };
    let pairs = pair_up(&args.truth, &args.restored, extra)?;

    let mut csv = String::from("image,psnr,ssim,icp\n");
    let (mut sp, mut ss, mut si, mut ni) = (0.0, 0.0, 0.0, 0usize);
    let mut coverage: Vec<(ImageGrid, ImageGrid, Vec<ImageGrid>)> = Vec::new();
    let mut all_sampled = true;
    for p in &pairs {
        let truth = files::read(&p.truth)?;
        let restored = files::read(&p.restored)?;
        let v_psnr = psnr(&restored, &truth, args.peak)?;
        let v_ssim = ssim(&restored, &truth, args.peak)?;
        let bound = if let Some(t) = &table {
            Some(apply_calibration(t, &files::read(&files::sibling(&p.restored, "std"))?))
        } else if let Some(b) = args.bound {
            Some(ImageGrid::filled(truth.height(), truth.width(), b))
        } else {
            let q = files::sibling(&p.restored, "q");
            q.is_file().then(|| files::read(&q)).transpose()?
        };
        let v_icp = bound.map(|b| icp(&truth, &restored, &b)).transpose()?;
        sp += v_psnr;
        ss += v_ssim;
        let icp_cell = match v_icp {
            Some(v) => {
                si += v;
                ni += 1;
                v.to_string()
            }
            None => String::new(),
        };
        let _ = writeln!(csv, "{},{v_psnr},{v_ssim},{icp_cell}", p.name);

        let sdir = crate::restore::samples_dir(&p.restored);
        if all_sampled && sdir.is_dir() {
            let samples = files::list_rasters(&sdir)?
                .iter()
                .map(|s| files::read(s))
                .collect::<CliResult<Vec<_>>>()?;
            if samples.len() >= 2 {
                coverage.push((truth, restored, samples));
            } else {
                all_sampled = false;
            }
        } else {
            all_sampled = false;
        }
    }
    let n = pairs.len() as f64;
    let mean_icp = if ni == pairs.len() {
        (si / n).to_string()
    } else {
        String::new()
    };
    let _ = writeln!(csv, "mean,{},{},{mean_icp}", sp / n, ss / n);
    files::write_text(&args.output, &csv)?;

    if all_sampled && !coverage.is_empty() {
        let inputs: Vec<CoverageInput<'_>> = coverage
            .iter()
            .map(|(t, m, s)| CoverageInput {
                ground_truth: t,
                mmse: m,
                samples: s,
            })
            .collect();
        let points = coverage_curve_pooled(&inputs, &default_alphas())?;
        files::write_text(&files::sibling(&args.output, "coverage"), &coverage_csv(&points))?;
        let svg = files::sibling(&args.output, "coverage").with_extension("svg");
        files::write_text(&svg, &coverage_svg(&points))?;
    }
    print!("{csv}");
    Ok(())
}
