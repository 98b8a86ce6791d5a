//! `simulate`: target/degraded pairs from clean rasters or synthetic scenes.

use std::path::{Path, PathBuf};

use clap::Args;
use satrestore::forward::{antialias_downsample, degrade, load_forward_model, quantize_12bit, save_forward_model};
use satrestore::synth::toy_scene;
use satrestore::{ForwardModel, ImageGrid, Rng};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};
use crate::files;

pub const MANIFEST_NAME: &str = "simulate_manifest.json";
const MODEL_NAME: &str = "forward_model.json";
const KERNEL_NAME: &str = "forward_model.kernel.f32r";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    F32r,
    Png,
    Pgm,
}

impl OutputFormat {
    fn ext(self) -> &'static str {
        match self {
            OutputFormat::F32r => "f32r",
            OutputFormat::Png => "png",
            OutputFormat::Pgm => "pgm",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Clean rasters or directories of them.
    #[arg(long = "input", num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Generate this many synthetic scenes instead of reading inputs.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Target edge length of synthetic scenes.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Forward model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Decimation from the clean raster to the target grid.
    #[arg(long, default_value_t = 1)]
    pub target_scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::F32r)]
    pub format: OutputFormat,
    /// Blur and decimate only.
    #[arg(long)]
    pub no_noise: bool,
    /// Regenerate the outputs recorded in a simulate manifest.
    #[arg(long, conflicts_with_all = ["inputs", "synthetic", "model"])]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub seed: u64,
    pub target_scale: usize,
    pub format: OutputFormat,
    pub no_noise: bool,
    /// Copy of the forward model, relative to the manifest.
    pub model: String,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// Clean raster path, or `synthetic:<edge>` for generated scenes.
    pub source: String,
    pub substream: u64,
    pub target: String,
    pub degraded: String,
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    if let Some(manifest) = &args.replay {
        return replay(manifest, &args.output);
    }
    let model_path = args
        .model
        .as_ref()
        .ok_or_else(|| CliError::config("simulate needs --model (or --replay)"))?;
    let fm = load_forward_model(model_path)?;
    let sources = match args.synthetic {
        Some(n) => {
            if !args.inputs.is_empty() {
                return Err(CliError::config("--synthetic and --input are exclusive"));
            }
            (0..n).map(|_| format!("synthetic:{}", args.size)).collect()
        }
        None => expand_inputs(&args.inputs)?,
    };
    if sources.is_empty() {
        return Err(CliError::config("no inputs: pass --input or --synthetic"));
    }
    let items = sources
        .iter()
        .enumerate()
        .map(|(i, source)| {
            let stem = match source.strip_prefix("synthetic:") {
                Some(_) => format!("scene_{i:03}"),
                None => Path::new(source)
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
            };
            ManifestItem {
                source: source.clone(),
                substream: i as u64,
                target: format!("{stem}.target.{}", args.format.ext()),
                degraded: format!("{stem}.degraded.{}", args.format.ext()),
            }
        })
        .collect();
    let manifest = SimulateManifest {
        seed: args.seed,
        target_scale: args.target_scale,
        format: args.format,
        no_noise: args.no_noise,
        model: MODEL_NAME.into(),
        items,
    };
    execute(&manifest, &fm, &args.output)
}

fn expand_inputs(inputs: &[PathBuf]) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(files::list_rasters(p)?);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::data(format!("input not found: {}", p.display())));
        }
    }
    out.into_iter()
        .map(|p| {
            let abs = p.canonicalize().map_err(|e| io_err(&p, e))?;
            Ok(abs.to_string_lossy().into_owned())
        })
        .collect()
}

fn replay(manifest_path: &Path, output: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: SimulateManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let fm = load_forward_model(base.join(&manifest.model))?;
    execute(&manifest, &fm, output)
}

fn clean_image(source: &str, target_scale: usize, rng: &mut Rng) -> CliResult<ImageGrid> {
    match source.strip_prefix("synthetic:") {
        Some(edge) => {
            let edge: usize = edge
                .parse()
                .map_err(|_| CliError::config(format!("bad synthetic source '{source}'")))?;
            let n = edge * target_scale;
            Ok(toy_scene(n, n, rng))
        }
        None => files::read(Path::new(source)),
    }
}

fn noiseless(target: &ImageGrid, fm: &ForwardModel) -> CliResult<ImageGrid> {
    let y = fm.apply(target)?;
    Ok(if fm.quantize { y.map(quantize_12bit) } else { y })
}

fn execute(manifest: &SimulateManifest, fm: &ForwardModel, output: &Path) -> CliResult<()> {
    std::fs::create_dir_all(output).map_err(|e| io_err(output, e))?;
    let root = Rng::new(manifest.seed);
    for item in &manifest.items {
        let mut rng = root.substream(item.substream);
        let clean = clean_image(&item.source, manifest.target_scale, &mut rng)?;
        let target = antialias_downsample(&clean, manifest.target_scale)?;
        let degraded = if manifest.no_noise {
            noiseless(&target, fm)?
        } else {
            degrade(&target, fm, &mut rng)?
        };
        files::write(&output.join(&item.target), &target)?;
        files::write(&output.join(&item.degraded), &degraded)?;
    }
    save_forward_model(output.join(MODEL_NAME), fm, KERNEL_NAME)?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    files::write_text(&output.join(MANIFEST_NAME), &text)?;
    println!(
        "simulated {} pair(s) into {}",
        manifest.items.len(),
        output.display()
    );
    Ok(())
}
