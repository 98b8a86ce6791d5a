//! Gaussian denoisers conditioned on a noise level `sigma_d`, used as the
//! implicit prior step of the splitting solver.

pub(crate) mod dct;
mod tv;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use tv::total_variation;

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::nn::{self, Network, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvParams {
    pub iterations: usize,
    pub step: f64,
    /// TV prior strength: the proximal weight is `strength * sigma_d^2`.
    pub strength: f64,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            iterations: 30,
            step: 0.248,
            strength: 64.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DctParams {
    pub block: usize,
    pub stride: usize,
    /// Soft threshold is `threshold_scale * sigma_d`.
    pub threshold_scale: f64,
}

impl Default for DctParams {
    fn default() -> Self {
        Self {
            block: 8,
            stride: 4,
            threshold_scale: 1.5,
        }
    }
}

/// Network taking `[image, sigma plane]` and returning the denoised image.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnDenoiser {
    pub network: Network,
}

impl CnnDenoiser {
    pub fn new(network: Network) -> Result<Self> {
        let out = network.output_shape(Shape(2, 16, 16))?;
        if out != Shape(1, 16, 16) {
            return Err(Error::Model(format!(
                "denoiser network maps 2x16x16 to {out}, expected 1x16x16"
            )));
        }
        Ok(Self { network })
    }

    fn run(&self, x: &ImageGrid, sigma_d: f64) -> Result<ImageGrid> {
        let (h, w) = x.shape();
        let mut input = Vec::with_capacity(2 * h * w);
        input.extend_from_slice(x.data());
        input.extend(std::iter::repeat(sigma_d).take(h * w));
        let out = self.network.forward(&Tensor::from_vec(2, h, w, input)?)?;
        if out.shape() != Shape(1, h, w) {
            return Err(Error::Model(format!(
                "denoiser produced {} for a {}x{} input",
                out.shape(),
                h,
                w
            )));
        }
        ImageGrid::new(h, w, out.data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    TvChambolle(TvParams),
    DctShrinkage(DctParams),
    LoadedCnn(Arc<CnnDenoiser>),
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::TvChambolle(TvParams::default())
    }
}

impl DenoiserSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DenoiserSpec::TvChambolle(_) => "tv_chambolle",
            DenoiserSpec::DctShrinkage(_) => "dct_shrinkage",
            DenoiserSpec::LoadedCnn(_) => "loaded_cnn",
        }
    }

    /// `tv`, `dct`, or a path to a weights manifest.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "tv" | "tv_chambolle" => Ok(DenoiserSpec::TvChambolle(TvParams::default())),
            "dct" | "dct_shrinkage" => Ok(DenoiserSpec::DctShrinkage(DctParams::default())),
            path => load_cnn_denoiser(path),
        }
    }
}

/// Load a `denoiser` network from a weights manifest.
pub fn load_cnn_denoiser(manifest_path: impl AsRef<Path>) -> Result<DenoiserSpec> {
    let mut manifest = nn::load_manifest(manifest_path)?;
    let network = manifest
        .networks
        .remove("denoiser")
        .ok_or_else(|| Error::Model("manifest has no 'denoiser' network".into()))?;
    Ok(DenoiserSpec::LoadedCnn(Arc::new(CnnDenoiser::new(network)?)))
}

/// Denoise `x` assuming additive white Gaussian noise of level `sigma_d`.
pub fn denoise(x: &ImageGrid, sigma_d: f64, spec: &DenoiserSpec) -> Result<ImageGrid> {
    if !(sigma_d > 0.0 && sigma_d.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "denoiser noise level must be positive, got {sigma_d}"
        )));
    }
    match spec {
        DenoiserSpec::TvChambolle(p) => Ok(tv::tv_prox(
            x,
            p.strength * sigma_d * sigma_d,
            p.iterations,
            p.step,
        )),
        DenoiserSpec::DctShrinkage(p) => Ok(dct::dct_shrink(
            x,
            p.block,
            p.stride,
            p.threshold_scale * sigma_d,
        )),
        DenoiserSpec::LoadedCnn(net) => net.run(x, sigma_d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build;
    use crate::rng::Rng;

    fn step_edge(n: usize) -> ImageGrid {
        ImageGrid::from_fn(n, n, |_, c| if c < n / 2 { 0.2 } else { 0.8 })
    }

    fn noisy(clean: &ImageGrid, sigma: f64, seed: u64) -> ImageGrid {
        let mut rng = Rng::new(seed);
        clean.map(|v| v + sigma * rng.gaussian())
    }

    fn mse(a: &ImageGrid, b: &ImageGrid) -> f64 {
        a.zip_map(b, |x, y| (x - y).powi(2)).unwrap().mean()
    }

    fn specs() -> Vec<DenoiserSpec> {
        vec![
            DenoiserSpec::TvChambolle(TvParams::default()),
            DenoiserSpec::DctShrinkage(DctParams::default()),
        ]
    }

    #[test]
    fn vanishing_sigma_returns_input() {
        let x = noisy(&step_edge(16), 0.05, 1);
        for spec in specs() {
            let out = denoise(&x, 1e-9, &spec).unwrap();
            let err = out
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-7, "{}: {err}", spec.name());
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        let x = ImageGrid::filled(12, 20, 0.42);
        for spec in specs() {
            for sigma in [0.01, 0.1, 1.0] {
                let out = denoise(&x, sigma, &spec).unwrap();
                assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12), "{}", spec.name());
            }
        }
    }

    #[test]
    fn tv_reduces_error_on_noisy_step() {
        let clean = step_edge(32);
        let x = noisy(&clean, 0.1, 2);
        let out = denoise(&x, 0.1, &DenoiserSpec::TvChambolle(TvParams::default())).unwrap();
        assert!(mse(&out, &clean) < 0.5 * mse(&x, &clean));
        let dct = denoise(&x, 0.1, &DenoiserSpec::DctShrinkage(DctParams::default())).unwrap();
        assert!(mse(&dct, &clean) < mse(&x, &clean));
    }

    #[test]
    fn tv_does_not_increase_total_variation() {
        let mut rng = Rng::new(3);
        for trial in 0..20 {
            let x = ImageGrid::from_fn(16, 16, |_, _| rng.uniform());
            let sigma = 0.01 + 0.05 * trial as f64;
            let out = denoise(&x, sigma, &DenoiserSpec::default()).unwrap();
            assert!(total_variation(&out) <= total_variation(&x) + 1e-12);
        }
    }

    #[test]
    fn output_range_stays_near_input_range() {
        let mut rng = Rng::new(4);
        for trial in 0..20 {
            let clean = step_edge(24);
            let x = noisy(&clean, 0.02 + 0.01 * trial as f64, rng.next_u64());
            for spec in specs() {
                for sigma in [0.01, 0.05, 0.2] {
                    let out = denoise(&x, sigma, &spec).unwrap();
                    assert!(out.min() >= x.min() - sigma - 1e-12, "{}", spec.name());
                    assert!(out.max() <= x.max() + sigma + 1e-12, "{}", spec.name());
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let x = noisy(&step_edge(16), 0.05, 5);
        for spec in specs() {
            assert_eq!(denoise(&x, 0.05, &spec).unwrap(), denoise(&x, 0.05, &spec).unwrap());
        }
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let x = ImageGrid::zeros(4, 4);
        assert!(denoise(&x, 0.0, &DenoiserSpec::default()).is_err());
        assert!(denoise(&x, -1.0, &DenoiserSpec::default()).is_err());
    }

    #[test]
    fn identity_cnn_returns_input() {
        let net = Network::new(vec![
            build::conv2d("id", 2, 1, 1, 1, 0, vec![1.0, 0.0]),
            build::bias("b", vec![0.0]),
        ]);
        let spec = DenoiserSpec::LoadedCnn(Arc::new(CnnDenoiser::new(net).unwrap()));
        let x = noisy(&step_edge(8), 0.1, 6);
        assert_eq!(denoise(&x, 0.3, &spec).unwrap(), x);
    }

    #[test]
    fn cnn_with_wrong_io_rejected() {
        let net = Network::new(vec![build::conv2d("c", 1, 1, 1, 1, 0, vec![1.0])]);
        assert!(CnnDenoiser::new(net).is_err());
    }
}
