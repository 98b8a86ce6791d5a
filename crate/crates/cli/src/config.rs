//! Restoration job configuration: a JSON document, dotted-path `--set`
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use satrestore::denoise::{DctParams, DenoiserSpec, TvParams};
use satrestore::satdpir::{DpirConfig, SolverMode};
use satrestore::vble::{VbleConfig, VbleMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Deblurring and denoising on the measurement grid.
    Ir,
    /// Restoration combined with x2 super-resolution.
    IrSisr,
}

impl Problem {
    pub fn scale(self) -> usize {
        match self {
            Problem::Ir => 1,
            Problem::IrSisr => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Satdpir,
    Dpir,
    Vble,
    VbleXz,
}

impl Method {
    pub fn is_vble(self) -> bool {
        matches!(self, Method::Vble | Method::VbleXz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    /// Tile edge in target pixels; `None` restores the whole image at once.
    pub tile: Option<usize>,
    pub overlap: usize,
    /// Extra context restored around every tile and then discarded.
    pub halo: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            tile: None,
            overlap: 32,
            halo: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SatdpirBlock {
    #[serde(flatten)]
    pub solver: DpirConfig,
    /// `tv`, `dct`, or a weights manifest path.
    pub denoiser: String,
    pub tv: TvParams,
    pub dct: DctParams,
}

impl Default for SatdpirBlock {
    fn default() -> Self {
        Self {
            solver: DpirConfig::default(),
            denoiser: "tv".into(),
            tv: TvParams::default(),
            dct: DctParams::default(),
        }
    }
}

impl SatdpirBlock {
    pub fn denoiser_spec(&self) -> CliResult<DenoiserSpec> {
        Ok(match self.denoiser.as_str() {
            "tv" | "tv_chambolle" => DenoiserSpec::TvChambolle(self.tv),
            "dct" | "dct_shrinkage" => DenoiserSpec::DctShrinkage(self.dct),
            path => DenoiserSpec::parse(path)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticParams {
    pub block: usize,
    pub tau: f64,
    pub gamma: f64,
}

impl Default for AnalyticParams {
    fn default() -> Self {
        Self {
            block: 8,
            tau: 0.3,
            gamma: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VbleBlock {
    #[serde(flatten)]
    pub solver: VbleConfig,
    /// CAE weights manifest, or `analytic` for the block-DCT linear model.
    pub cae: String,
    pub analytic: AnalyticParams,
    /// Level of the emitted quantile map.
    pub alpha: f64,
}

impl Default for VbleBlock {
    fn default() -> Self {
        Self {
            solver: VbleConfig::default(),
            cae: "analytic".into(),
            analytic: AnalyticParams::default(),
            alpha: 0.9,
        }
    }
}

/// An optional output: `true`/`false`, or an explicit path (which implies on).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Emit {
    Enabled(bool),
    Path(PathBuf),
}

impl Emit {
    /// Where to write, given the default location; `None` when disabled.
    pub fn target(&self, default: PathBuf) -> Option<PathBuf> {
        match self {
            Emit::Enabled(true) => Some(default),
            Emit::Enabled(false) => None,
            Emit::Path(p) => Some(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    /// Checked against the forward model's scale; inferred when absent.
    pub problem: Option<Problem>,
    /// Forward model JSON.
    pub model: Option<PathBuf>,
    pub method: Method,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub tiling: TilingConfig,
    pub satdpir: SatdpirBlock,
    pub vble: VbleBlock,
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    /// Posterior sample directory (default `<output stem>.samples/`).
    pub emit_samples: Emit,
    /// Quantile map (default `<output stem>.q.<ext>`).
    pub emit_quantiles: Emit,
    /// Sample standard deviation map (default `<output stem>.std.<ext>`).
    pub emit_deviation: Emit,
    pub jobs: Option<usize>,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            problem: None,
            model: None,
            method: Method::Satdpir,
            input: None,
            output: None,
            seed: 0,
            tiling: TilingConfig::default(),
            satdpir: SatdpirBlock::default(),
            vble: VbleBlock::default(),
            report: None,
            trace: None,
            emit_samples: Emit::Enabled(true),
            emit_quantiles: Emit::Enabled(true),
            emit_deviation: Emit::Enabled(true),
            jobs: None,
        }
    }
}

impl JobConfig {
    /// Reads a config file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: JobConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let emitted = [
            &mut cfg.emit_samples,
            &mut cfg.emit_quantiles,
            &mut cfg.emit_deviation,
        ]
        .into_iter()
        .filter_map(|e| match e {
            Emit::Path(p) => Some(p),
            Emit::Enabled(_) => None,
        });
        for p in [
            &mut cfg.model,
            &mut cfg.input,
            &mut cfg.output,
            &mut cfg.report,
            &mut cfg.trace,
        ]
        .into_iter()
        .flatten()
        .chain(emitted)
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for s in [&mut cfg.satdpir.denoiser, &mut cfg.vble.cae] {
            if !matches!(s.as_str(), "tv" | "tv_chambolle" | "dct" | "dct_shrinkage" | "analytic")
                && Path::new(s.as_str()).is_relative()
            {
                *s = base.join(s.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the document
    /// and must already exist; values parse as JSON, falling back to a string.
    pub fn with_overrides(self, sets: &[String]) -> CliResult<Self> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut doc = serde_json::to_value(&self).expect("config serializes");
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects key=value, got '{set}'")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc).map_err(|e| CliError::config(format!("after --set: {e}")))
    }

    pub fn dpir_config(&self) -> DpirConfig {
        let mut cfg = self.satdpir.solver.clone();
        cfg.mode = match self.method {
            Method::Dpir => SolverMode::DpirFullGd,
            _ => SolverMode::SatdpirTwoPhase,
        };
        cfg
    }

    pub fn vble_config(&self) -> VbleConfig {
        let mut cfg = self.vble.solver.clone();
        cfg.mode = match self.method {
            Method::Vble => VbleMode::Vble,
            _ => VbleMode::VbleXz,
        };
        cfg.seed = self.seed;
        cfg
    }

    /// Checks that the problem type agrees with the model's scale and returns it.
    pub fn resolve_problem(&self, scale: usize) -> CliResult<Problem> {
        let inferred = match scale {
            1 => Problem::Ir,
            2 => Problem::IrSisr,
            s => return Err(CliError::config(format!("unsupported model scale {s}"))),
        };
        match self.problem {
            Some(p) if p != inferred => Err(CliError::config(format!(
                "problem {p:?} needs scale {}, but the forward model has scale {scale}",
                p.scale()
            ))),
            _ => Ok(inferred),
        }
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: '{}' is not an object", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| CliError::config(format!("--set {key}: unknown key '{part}'")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}
