//! `restore`: point estimates with the HQS solvers, or posterior samples,
//! MMSE and error maps with the variational solvers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;
use satrestore::cae::{load_cae, AnalyticCae, CaeModel, LatentModel};
use satrestore::denoise::DenoiserSpec;
use satrestore::forward::load_forward_model;
use satrestore::satdpir::{restore as hqs_restore, DpirConfig, RestoreReport};
use satrestore::uncertainty::{deviation_quantile, sample_std};
use satrestore::vble::{fit, sample_mean, sample_posterior, VbleConfig};
use satrestore::{ForwardModel, ImageGrid, Rng};
use serde::Serialize;

use crate::config::{Emit, JobConfig, Method, Problem};
use crate::error::{CliError, CliResult};
use crate::files;
use crate::tiling::{Tile, TilePlan};

#[derive(Debug, Clone, Default, Args)]
pub struct RestoreArgs {
    /// JSON job config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path config override, e.g. `--set satdpir.lambda=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Forward model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// HQS data-fit strategy; selects `satdpir` or `dpir`.
    #[arg(long, value_enum)]
    pub mode: Option<HqsMode>,
    /// `tv`, `dct`, or a denoiser weights manifest.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Regularization weight of the selected method.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// HQS iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON run report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-iteration CSV trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// CAE weights manifest, or `analytic`.
    #[arg(long)]
    pub cae: Option<String>,
    /// Variational optimization iterations.
    #[arg(long)]
    pub opt_iters: Option<usize>,
    /// Posterior samples to draw.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Level of the emitted quantile map.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write posterior samples, optionally into DIR.
    #[arg(long, value_name = "DIR", num_args = 0..=1)]
    pub emit_samples: Option<Option<PathBuf>>,
    /// Write the quantile map, optionally to PATH.
    #[arg(long, value_name = "PATH", num_args = 0..=1)]
    pub emit_quantiles: Option<Option<PathBuf>>,
    /// Write the sample standard deviation map, optionally to PATH.
    #[arg(long, value_name = "PATH", num_args = 0..=1)]
    pub emit_deviation: Option<Option<PathBuf>>,
    /// Tile edge in target pixels.
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Context around each tile, in target pixels.
    #[arg(long)]
    pub halo: Option<usize>,
    /// Worker threads (capped by SATRESTORE_THREADS).
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl RestoreArgs {
    pub fn job_config(&self) -> CliResult<JobConfig> {
        let base = match &self.config {
            Some(p) => JobConfig::load(p)?,
            None => JobConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.sets)?;
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.method, cfg.method);
        set!(self.seed, cfg.seed);
        set!(self.denoiser, cfg.satdpir.denoiser);
        set!(self.iters, cfg.satdpir.solver.n_iters);
        set!(self.sigma1, cfg.satdpir.solver.sigma1);
        set!(self.cae, cfg.vble.cae);
        set!(self.opt_iters, cfg.vble.solver.n_opt_iters);
        set!(self.samples, cfg.vble.solver.n_posterior_samples);
        set!(self.alpha, cfg.vble.alpha);
        for (flag, field) in [
            (&self.emit_samples, &mut cfg.emit_samples),
            (&self.emit_quantiles, &mut cfg.emit_quantiles),
            (&self.emit_deviation, &mut cfg.emit_deviation),
        ] {
            match flag {
                Some(Some(p)) => *field = Emit::Path(p.clone()),
                Some(None) => *field = Emit::Enabled(true),
                None => {}
            }
        }
        if let Some(m) = self.mode {
            if cfg.method.is_vble() {
                return Err(CliError::config("--mode applies to the HQS methods only"));
            }
            cfg.method = match m {
                HqsMode::SatdpirTwoPhase => Method::Satdpir,
                HqsMode::DpirFullGd => Method::Dpir,
            };
        }
        set!(self.overlap, cfg.tiling.overlap);
        set!(self.halo, cfg.tiling.halo);
        if let Some(l) = self.lambda {
            if cfg.method.is_vble() {
                cfg.vble.solver.lambda = l;
            } else {
                cfg.satdpir.solver.lambda = l;
            }
        }
        for (flag, field) in [
            (&self.input, &mut cfg.input),
            (&self.model, &mut cfg.model),
            (&self.output, &mut cfg.output),
            (&self.report, &mut cfg.report),
            (&self.trace, &mut cfg.trace),
        ] {
            if flag.is_some() {
                *field = flag.clone();
            }
        }
        if self.tile.is_some() {
            cfg.tiling.tile = self.tile;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum HqsMode {
    SatdpirTwoPhase,
    DpirFullGd,
}

/// Everything a restoration produced, before it is written out.
#[derive(Debug, Clone)]
pub struct RestoreResult {
    pub problem: Problem,
    /// Point estimate (MMSE for the variational methods).
    pub image: ImageGrid,
    pub samples: Vec<ImageGrid>,
    pub deviation: Option<ImageGrid>,
    pub quantile: Option<ImageGrid>,
    pub tiles: usize,
    pub hqs_reports: Vec<RestoreReport>,
    pub vble_tiles: Vec<VbleTileReport>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VbleTileReport {
    pub tile: usize,
    pub rejected_steps: usize,
    pub warning: Option<String>,
    pub final_elbo: f64,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    method: Method,
    problem: Problem,
    tiles: usize,
    total_ms: f64,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    hqs: &'a [RestoreReport],
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    vble: &'a [VbleTileReport],
}

pub fn run(args: &RestoreArgs) -> CliResult<()> {
    let cfg = args.job_config()?;
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| CliError::config("restore needs an input (--input or config)"))?;
    let model = cfg
        .model
        .clone()
        .ok_or_else(|| CliError::config("restore needs a forward model (--model or config)"))?;
    let output = cfg
        .output
        .clone()
        .ok_or_else(|| CliError::config("restore needs an output path (--output or config)"))?;
    let fm = load_forward_model(&model)?;
    let y = files::read(&input)?;
    let result = restore_image(&y, &fm, &cfg)?;
    write_outputs(&cfg, &output, &result)?;
    for r in &result.vble_tiles {
        if let Some(w) = &r.warning {
            eprintln!("warning: tile {}: {w}", r.tile);
        }
    }
    for (i, r) in result.hqs_reports.iter().enumerate() {
        if r.stalls > 0 {
            eprintln!("warning: tile {i}: data-fit step stalled in {} iteration(s)", r.stalls);
        }
    }
    println!(
        "restored {} ({} tile(s), {:.0} ms) -> {}",
        input.display(),
        result.tiles,
        result.total_ms,
        output.display()
    );
    Ok(())
}

/// Pool size: `--jobs` (default: available cores), capped by SATRESTORE_THREADS.
pub fn worker_count(jobs: Option<usize>) -> usize {
    let mut n = jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    if let Some(cap) = std::env::var("SATRESTORE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        n = n.min(cap);
    }
    n.max(1)
}

enum Prior {
    Cae(Arc<CaeModel>),
    Analytic(crate::config::AnalyticParams),
}

impl Prior {
    fn load(cfg: &JobConfig) -> CliResult<Self> {
        Ok(match cfg.vble.cae.as_str() {
            "analytic" => Prior::Analytic(cfg.vble.analytic),
            path => Prior::Cae(Arc::new(load_cae(path)?)),
        })
    }

    /// Image sizes must be multiples of this.
    fn granularity(&self) -> CliResult<usize> {
        Ok(match self {
            Prior::Analytic(a) => a.block,
            Prior::Cae(m) => {
                let dims = m.dims(m.reference_shape)?;
                let h = dims.h.unwrap_or(dims.z);
                (m.reference_shape.1 / h.1.max(1)).max(1)
            }
        })
    }

    fn model_for(&self, height: usize, width: usize) -> CliResult<LatentModel> {
        Ok(match self {
            Prior::Cae(m) => LatentModel::Cae(CaeModel::clone(m)),
            Prior::Analytic(a) => {
                LatentModel::Analytic(AnalyticCae::new(height, width, a.block, a.tau, a.gamma)?)
            }
        })
    }
}

enum TileOutput {
    Hqs(ImageGrid, RestoreReport),
    Vble(Vec<ImageGrid>, VbleTileReport),
}

/// Restores `y` according to `cfg`, tiling and parallelizing as configured.
pub fn restore_image(y: &ImageGrid, fm: &ForwardModel, cfg: &JobConfig) -> CliResult<RestoreResult> {
    let start = Instant::now();
    let problem = cfg.resolve_problem(fm.scale)?;
    let s = fm.scale;
    let target = (y.height() * s, y.width() * s);
    let plan = TilePlan::new(target, cfg.tiling.tile, cfg.tiling.overlap, cfg.tiling.halo, s)?;
    let tiles = plan.tiles();
    let root = Rng::new(cfg.seed);
    let tile_seed = |t: &Tile| {
        if tiles.len() == 1 {
            cfg.seed
        } else {
            root.substream(t.index as u64).next_u64()
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg.jobs))
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;

    let outputs: Vec<TileOutput> = if cfg.method.is_vble() {
        let vcfg = cfg.vble_config();
        vcfg.validate()?;
        if vcfg.n_posterior_samples < 2 {
            return Err(CliError::config("vble methods need at least 2 posterior samples"));
        }
        let prior = Prior::load(cfg)?;
        let g = prior.granularity()?;
        let (wh, ww) = plan.window_shape();
        if wh % g != 0 || ww % g != 0 {
            return Err(CliError::config(format!(
                "tile plus halo ({wh}x{ww}) is not a multiple of the latent model's downsampling factor {g}"
            )));
        }
        pool.install(|| {
            tiles
                .par_iter()
                .map(|t| {
                    let yt = plan.measurement_window(y, t);
                    let model = prior.model_for(wh, ww)?;
                    let tcfg = VbleConfig {
                        seed: tile_seed(t),
                        ..vcfg.clone()
                    };
                    match vble_tile(&yt, fm, &model, &tcfg, t.index)? {
                        TileOutput::Vble(samples, rep) => Ok(TileOutput::Vble(
                            samples
                                .iter()
                                .map(|x| plan.trim(x, t))
                                .collect::<CliResult<_>>()?,
                            rep,
                        )),
                        other => Ok(other),
                    }
                })
                .collect::<CliResult<_>>()
        })?
    } else {
        let dcfg = cfg.dpir_config();
        let denoiser = cfg.satdpir.denoiser_spec()?;
        pool.install(|| {
            tiles
                .par_iter()
                .map(|t| {
                    let yt = plan.measurement_window(y, t);
                    match hqs_tile(&yt, fm, &denoiser, &dcfg)? {
                        TileOutput::Hqs(img, rep) => Ok(TileOutput::Hqs(plan.trim(&img, t)?, rep)),
                        other => Ok(other),
                    }
                })
                .collect::<CliResult<_>>()
        })?
    };

    let mut hqs_reports = Vec::new();
    let mut vble_tiles = Vec::new();
    let mut images = Vec::new();
    let mut tile_samples = Vec::new();
    for out in outputs {
        match out {
            TileOutput::Hqs(img, rep) => {
                images.push(img);
                hqs_reports.push(rep);
            }
            TileOutput::Vble(samples, rep) => {
                tile_samples.push(samples);
                vble_tiles.push(rep);
            }
        }
    }

    let mut result = RestoreResult {
        problem,
        image: ImageGrid::zeros(0, 0),
        samples: Vec::new(),
        deviation: None,
        quantile: None,
        tiles: tiles.len(),
        hqs_reports,
        vble_tiles,
        total_ms: 0.0,
    };
    if cfg.method.is_vble() {
        let n = cfg.vble.solver.n_posterior_samples;
        let mut samples = Vec::with_capacity(n);
        for k in 0..n {
            let parts: Vec<ImageGrid> = tile_samples.iter().map(|ts| ts[k].clone()).collect();
            samples.push(plan.blend(&parts)?);
        }
        let mmse = sample_mean(&samples)?;
        result.deviation = Some(sample_std(&samples)?);
        result.quantile = Some(deviation_quantile(&samples, &mmse, cfg.vble.alpha)?);
        result.image = mmse;
        result.samples = samples;
    } else {
        result.image = plan.blend(&images)?;
    }
    if !result.image.all_finite() {
        return Err(CliError::numerical("restored image has non-finite pixels"));
    }
    result.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

fn hqs_tile(
    y: &ImageGrid,
    fm: &ForwardModel,
    denoiser: &DenoiserSpec,
    cfg: &DpirConfig,
) -> CliResult<TileOutput> {
    let out = hqs_restore(y, fm, denoiser, cfg)?;
    Ok(TileOutput::Hqs(out.image, out.report))
}

fn vble_tile(
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    cfg: &VbleConfig,
    index: usize,
) -> CliResult<TileOutput> {
    let fitted = fit(y, fm, model, cfg)?;
    let samples = sample_posterior(
        &fitted.state,
        model,
        cfg.n_posterior_samples,
        &Rng::with_stream(cfg.seed, 2),
        cfg.mode,
    )?;
    let final_elbo = fitted
        .trace
        .iter()
        .rev()
        .copied()
        .find(|v| v.is_finite())
        .unwrap_or(f64::NAN);
    Ok(TileOutput::Vble(
        samples,
        VbleTileReport {
            tile: index,
            rejected_steps: fitted.rejected_steps,
            warning: fitted.warning,
            final_elbo,
            trace: fitted.trace,
        },
    ))
}

/// Directory holding the posterior samples of `output`.
pub fn samples_dir(output: &Path) -> PathBuf {
    let stem = output.file_stem().unwrap_or_default().to_string_lossy();
    output.with_file_name(format!("{stem}.samples"))
}

pub fn write_outputs(cfg: &JobConfig, output: &Path, r: &RestoreResult) -> CliResult<()> {
    files::write(output, &r.image)?;
    let ext = output
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "f32r".into());
    if cfg.method.is_vble() {
        if let Some(dir) = cfg.emit_samples.target(samples_dir(output)) {
            if dir.exists() {
                for old in files::list_rasters(&dir)? {
                    std::fs::remove_file(&old).map_err(|e| crate::error::io_err(&old, e))?;
                }
            }
            for (k, s) in r.samples.iter().enumerate() {
                files::write(&dir.join(format!("sample_{k:04}.{ext}")), s)?;
            }
        }
        if let (Some(path), Some(q)) = (cfg.emit_quantiles.target(files::sibling(output, "q")), &r.quantile) {
            files::write(&path, q)?;
        }
        if let (Some(path), Some(d)) = (cfg.emit_deviation.target(files::sibling(output, "std")), &r.deviation) {
            files::write(&path, d)?;
        }
    }
    if let Some(path) = &cfg.report {
        let doc = ReportDoc {
            method: cfg.method,
            problem: r.problem,
            tiles: r.tiles,
            total_ms: r.total_ms,
            hqs: &r.hqs_reports,
            vble: &r.vble_tiles,
        };
        let text = serde_json::to_string_pretty(&doc).expect("report serializes");
        files::write_text(path, &text)?;
    }
    if let Some(path) = &cfg.trace {
        files::write_text(path, &trace_csv(r))?;
    }
    Ok(())
}

fn trace_csv(r: &RestoreResult) -> String {
    let mut s = String::new();
    if r.hqs_reports.is_empty() {
        s.push_str("tile,iteration,elbo\n");
        for t in &r.vble_tiles {
            for (k, v) in t.trace.iter().enumerate() {
                let _ = writeln!(s, "{},{k},{v}", t.tile);
            }
        }
    } else {
        s.push_str("tile,iteration,sigma_d,mu,sigma_bar,objective,gd_steps,stalled,clamped_pixels\n");
        for (i, rep) in r.hqs_reports.iter().enumerate() {
            for it in &rep.iterations {
                let _ = writeln!(
                    s,
                    "{i},{},{},{},{},{},{},{},{}",
                    it.iteration,
                    it.sigma_d,
                    it.mu,
                    it.sigma_bar,
                    it.objective,
                    it.gd_steps,
                    it.stalled,
                    it.clamped_pixels
                );
            }
        }
    }
    s
}
