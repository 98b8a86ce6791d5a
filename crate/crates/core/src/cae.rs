//! Latent generative models for variational restoration.
//!
//! [`CaeModel`] is a convolutional compressive autoencoder with a hyperprior:
//! the decoder maps the latent `z` to the image mean `D(z)`, a second decoder
//! gives the per-pixel deviation `sigma(z)`, and the hyper-decoder maps the
//! hyper-latent `h` to the mean and deviation of a Gaussian prior on `z`.
//! The hyper-latent itself has a standard-normal prior.
//!
//! [`AnalyticCae`] is a linear stand-in: `D(z) = W z` with `W` an orthonormal
//! block DCT, a `N(0, tau²)` prior on every latent entry and a constant
//! deviation `gamma`. Its posteriors are Gaussian and computable in closed form.

use std::path::Path;

use crate::denoise::dct::{dct_matrix, transform_block};
use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::nn::{self, Network, Shape, Tape, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

/// Derivative of softplus expressed through its output `s = softplus(v)`.
fn softplus_slope(s: f64) -> f64 {
    -(-s).exp_m1()
}

pub fn image_to_tensor(x: &ImageGrid) -> Tensor {
    Tensor {
        channels: 1,
        height: x.height(),
        width: x.width(),
        data: x.data().to_vec(),
    }
}

pub fn tensor_to_image(t: &Tensor) -> Result<ImageGrid> {
    if t.channels != 1 {
        return Err(Error::Dimension(format!(
            "expected a single-band tensor, got {}",
            t.shape()
        )));
    }
    ImageGrid::new(t.height, t.width, t.data.clone())
}

fn gaussian_logpdf_sum(x: &[f64], mean: &[f64], sigma: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(sigma)
        .map(|((x, m), s)| {
            let r = (x - m) / s;
            -0.5 * r * r - s.ln() - 0.5 * LN_2PI
        })
        .sum()
}

fn check_shape(t: &Tensor, expected: Shape, what: &str) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::Dimension(format!(
            "{what} is {}, expected {expected}",
            t.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentDims {
    pub image: Shape,
    pub z: Shape,
    /// `None` for models without a hyper-latent.
    pub h: Option<Shape>,
}

/// Convolutional autoencoder with hyperprior loaded from a weights manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub encoder: Network,
    pub decoder: Network,
    pub variance_decoder: Network,
    pub hyper_encoder: Network,
    pub hyper_decoder: Network,
    /// Image shape the manifest was validated against.
    pub reference_shape: Shape,
}

pub const CAE_ROLES: [&str; 5] = [
    "encoder",
    "decoder",
    "variance_decoder",
    "hyper_encoder",
    "hyper_decoder",
];

fn final_layer_name(net: &Network) -> &str {
    net.layers.last().map(|l| l.name.as_str()).unwrap_or("<empty>")
}

impl CaeModel {
    pub fn new(
        encoder: Network,
        decoder: Network,
        variance_decoder: Network,
        hyper_encoder: Network,
        hyper_decoder: Network,
        reference_shape: Shape,
    ) -> Result<Self> {
        let m = Self {
            encoder,
            decoder,
            variance_decoder,
            hyper_encoder,
            hyper_decoder,
            reference_shape,
        };
        m.dims(reference_shape)?;
        Ok(m)
    }

    /// Latent shapes for an image shape, checking that every network chains.
    pub fn dims(&self, image: Shape) -> Result<LatentDims> {
        let z = self
            .encoder
            .output_shape(image)
            .map_err(|e| Error::Model(format!("encoder: {e}")))?;
        let check_out = |net: &Network, role: &str, input: Shape, expected: Shape| -> Result<()> {
            let out = net
                .output_shape(input)
                .map_err(|e| Error::Model(format!("{role}: {e}")))?;
            if out != expected {
                return Err(Error::Model(format!(
                    "{role}: layer '{}' produces {out}, expected {expected}",
                    final_layer_name(net)
                )));
            }
            Ok(())
        };
        check_out(&self.decoder, "decoder", z, image)?;
        check_out(&self.variance_decoder, "variance_decoder", z, image)?;
        let h = self
            .hyper_encoder
            .output_shape(z)
            .map_err(|e| Error::Model(format!("hyper_encoder: {e}")))?;
        check_out(
            &self.hyper_decoder,
            "hyper_decoder",
            h,
            Shape(2 * z.0, z.1, z.2),
        )?;
        Ok(LatentDims { image, z, h: Some(h) })
    }

    /// Per-layer shape report for the reference image shape.
    pub fn shape_report(&self) -> Result<Vec<(String, Vec<(String, Shape)>)>> {
        let dims = self.dims(self.reference_shape)?;
        let h = dims.h.expect("hyperprior model");
        let chain = |net: &Network, input: Shape| -> Result<Vec<(String, Shape)>> {
            let shapes = net.shape_chain(input)?;
            let mut out = vec![("input".to_string(), shapes[0])];
            out.extend(
                net.layers
                    .iter()
                    .zip(&shapes[1..])
                    .map(|(l, s)| (format!("{} ({})", l.name, l.kind_name()), *s)),
            );
            Ok(out)
        };
        Ok(vec![
            ("encoder".into(), chain(&self.encoder, dims.image)?),
            ("decoder".into(), chain(&self.decoder, dims.z)?),
            ("variance_decoder".into(), chain(&self.variance_decoder, dims.z)?),
            ("hyper_encoder".into(), chain(&self.hyper_encoder, dims.z)?),
            ("hyper_decoder".into(), chain(&self.hyper_decoder, h)?),
        ])
    }
}

/// Load the five CAE networks from a manifest; the manifest must carry a
/// `reference_shape`.
pub fn load_cae(manifest_path: impl AsRef<Path>) -> Result<CaeModel> {
    let mut manifest = nn::load_manifest(manifest_path)?;
    let mut take = |role: &str| {
        manifest
            .networks
            .remove(role)
            .ok_or_else(|| Error::Model(format!("manifest has no '{role}' network")))
    };
    let encoder = take("encoder")?;
    let decoder = take("decoder")?;
    let variance_decoder = take("variance_decoder")?;
    let hyper_encoder = take("hyper_encoder")?;
    let hyper_decoder = take("hyper_decoder")?;
    let reference_shape = manifest
        .reference_shape
        .ok_or_else(|| Error::Model("CAE manifest needs a reference_shape".into()))?;
    CaeModel::new(
        encoder,
        decoder,
        variance_decoder,
        hyper_encoder,
        hyper_decoder,
        reference_shape,
    )
}

pub fn save_cae(path: impl AsRef<Path>, blob_name: &str, model: &CaeModel) -> Result<()> {
    nn::save_manifest(
        path,
        blob_name,
        &[
            ("encoder", &model.encoder),
            ("decoder", &model.decoder),
            ("variance_decoder", &model.variance_decoder),
            ("hyper_encoder", &model.hyper_encoder),
            ("hyper_decoder", &model.hyper_decoder),
        ],
        Some(model.reference_shape),
    )
}

/// Linear decoder over non-overlapping orthonormal DCT blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticCae {
    pub height: usize,
    pub width: usize,
    pub block: usize,
    pub tau: f64,
    pub gamma: f64,
    basis: Vec<f64>,
}

impl AnalyticCae {
    pub fn new(height: usize, width: usize, block: usize, tau: f64, gamma: f64) -> Result<Self> {
        if block == 0 || height % block != 0 || width % block != 0 {
            return Err(Error::Dimension(format!(
                "{height}x{width} image is not tiled by {block}x{block} blocks"
            )));
        }
        if !(tau > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau and gamma must be positive, got {tau} and {gamma}"
            )));
        }
        Ok(Self {
            height,
            width,
            block,
            tau,
            gamma,
            basis: dct_matrix(block),
        })
    }

    pub fn dims(&self) -> LatentDims {
        let s = Shape(1, self.height, self.width);
        LatentDims { image: s, z: s, h: None }
    }

    fn blockwise(&self, src: &[f64], inverse: bool) -> Vec<f64> {
        let n = self.block;
        let mut out = vec![0.0; src.len()];
        let mut b = vec![0.0; n * n];
        let mut o = vec![0.0; n * n];
        for br in (0..self.height).step_by(n) {
            for bc in (0..self.width).step_by(n) {
                for i in 0..n {
                    let row = (br + i) * self.width + bc;
                    b[i * n..(i + 1) * n].copy_from_slice(&src[row..row + n]);
                }
                transform_block(&self.basis, n, &b, &mut o, inverse);
                for i in 0..n {
                    let row = (br + i) * self.width + bc;
                    out[row..row + n].copy_from_slice(&o[i * n..(i + 1) * n]);
                }
            }
        }
        out
    }

    /// `W z`.
    pub fn apply_w(&self, z: &[f64]) -> Vec<f64> {
        self.blockwise(z, true)
    }

    /// `Wᵀ x`.
    pub fn apply_wt(&self, x: &[f64]) -> Vec<f64> {
        self.blockwise(x, false)
    }

    /// Dense `W` (column `j` is the image of the `j`-th unit latent). Intended
    /// for small oracle problems.
    pub fn dense_w(&self) -> Vec<Vec<f64>> {
        let n = self.height * self.width;
        (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                self.apply_w(&e)
            })
            .collect()
    }
}

/// Either kind of latent model, as consumed by the variational solver.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentModel {
    Cae(CaeModel),
    Analytic(AnalyticCae),
}

/// Forward pass with everything the reverse pass needs.
#[derive(Debug, Clone)]
pub struct CaeForward {
    pub mean: Tensor,
    pub sigma: Tensor,
    /// `(mu_z, sigma_z)` from the hyper-decoder.
    pub prior: Option<(Tensor, Tensor)>,
    tapes: Option<ForwardTapes>,
}

#[derive(Debug, Clone)]
struct ForwardTapes {
    decoder: Tape,
    variance: Tape,
    hyper: Tape,
}

/// Cotangents on the four decoder outputs; `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct OutputCotangents {
    pub mean: Option<Tensor>,
    pub sigma: Option<Tensor>,
    pub prior_mean: Option<Tensor>,
    pub prior_sigma: Option<Tensor>,
}

impl LatentModel {
    pub fn dims(&self, image: Shape) -> Result<LatentDims> {
        match self {
            LatentModel::Cae(m) => m.dims(image),
            LatentModel::Analytic(a) => {
                if image != a.dims().image {
                    return Err(Error::Dimension(format!(
                        "analytic model is built for {}, got {image}",
                        a.dims().image
                    )));
                }
                Ok(a.dims())
            }
        }
    }

    fn check_latents(&self, z: &Tensor, h: Option<&Tensor>) -> Result<()> {
        match self {
            LatentModel::Analytic(a) => check_shape(z, a.dims().z, "latent z"),
            LatentModel::Cae(m) => {
                let hs = m
                    .hyper_encoder
                    .output_shape(z.shape())
                    .map_err(|e| Error::Model(format!("hyper_encoder: {e}")))?;
                match h {
                    Some(h) => check_shape(h, hs, "hyper-latent h"),
                    None => Err(Error::Dimension("model needs a hyper-latent h".into())),
                }
            }
        }
    }

    pub fn forward(&self, z: &Tensor, h: Option<&Tensor>) -> Result<CaeForward> {
        self.check_latents(z, h)?;
        match self {
            LatentModel::Analytic(a) => {
                let mean = Tensor::from_vec(1, a.height, a.width, a.apply_w(&z.data))?;
                let sigma = Tensor {
                    data: vec![a.gamma; mean.data.len()],
                    ..mean.clone()
                };
                Ok(CaeForward {
                    mean,
                    sigma,
                    prior: None,
                    tapes: None,
                })
            }
            LatentModel::Cae(m) => {
                let h = h.expect("checked");
                let (mean, decoder) = m
                    .decoder
                    .forward_with_tape(z)
                    .map_err(|e| Error::Model(format!("decoder: {e}")))?;
                let (mut sigma, variance) = m
                    .variance_decoder
                    .forward_with_tape(z)
                    .map_err(|e| Error::Model(format!("variance_decoder: {e}")))?;
                sigma.data.iter_mut().for_each(|v| *v = softplus(*v));
                let (hd, hyper) = m
                    .hyper_decoder
                    .forward_with_tape(h)
                    .map_err(|e| Error::Model(format!("hyper_decoder: {e}")))?;
                let half = z.data.len();
                let mu_z = Tensor::from_vec(z.channels, z.height, z.width, hd.data[..half].to_vec())?;
                let sigma_z = Tensor::from_vec(
                    z.channels,
                    z.height,
                    z.width,
                    hd.data[half..].iter().map(|&v| softplus(v)).collect(),
                )?;
                Ok(CaeForward {
                    mean,
                    sigma,
                    prior: Some((mu_z, sigma_z)),
                    tapes: Some(ForwardTapes {
                        decoder,
                        variance,
                        hyper,
                    }),
                })
            }
        }
    }

    /// `(D(z), sigma(z))`.
    pub fn decode(&self, z: &Tensor, h: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let f = self.forward(z, h)?;
        Ok((f.mean, f.sigma))
    }

    /// Reverse pass of [`LatentModel::forward`]: gradients w.r.t. `z` and `h`.
    pub fn backward(
        &self,
        fwd: &CaeForward,
        ct: &OutputCotangents,
    ) -> Result<(Tensor, Option<Tensor>)> {
        match self {
            LatentModel::Analytic(a) => {
                if ct.prior_mean.is_some() || ct.prior_sigma.is_some() {
                    return Err(Error::Dimension(
                        "analytic model has no hyperprior outputs".into(),
                    ));
                }
                let z_shape = a.dims().z;
                let gz = match &ct.mean {
                    Some(c) => {
                        check_shape(c, fwd.mean.shape(), "cotangent on D(z)")?;
                        a.apply_wt(&c.data)
                    }
                    None => vec![0.0; a.height * a.width],
                };
                if let Some(c) = &ct.sigma {
                    check_shape(c, fwd.sigma.shape(), "cotangent on sigma(z)")?;
                }
                Ok((Tensor::from_vec(z_shape.0, z_shape.1, z_shape.2, gz)?, None))
            }
            LatentModel::Cae(m) => {
                let tapes = fwd
                    .tapes
                    .as_ref()
                    .ok_or_else(|| Error::Model("forward pass was not taped".into()))?;
                let (mu_z, sigma_z) = fwd.prior.as_ref().expect("hyperprior outputs");
                let z_shape = mu_z.shape();
                let mut gz = Tensor::zeros(z_shape.0, z_shape.1, z_shape.2);
                if let Some(c) = &ct.mean {
                    check_shape(c, fwd.mean.shape(), "cotangent on D(z)")?;
                    let g = m.decoder.vjp(&tapes.decoder, c)?;
                    gz.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b);
                }
                if let Some(c) = &ct.sigma {
                    check_shape(c, fwd.sigma.shape(), "cotangent on sigma(z)")?;
                    let mut raw = c.clone();
                    raw.data
                        .iter_mut()
                        .zip(&fwd.sigma.data)
                        .for_each(|(g, &s)| *g *= softplus_slope(s));
                    let g = m.variance_decoder.vjp(&tapes.variance, &raw)?;
                    gz.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b);
                }
                let half = mu_z.data.len();
                let mut hd = Tensor::zeros(2 * z_shape.0, z_shape.1, z_shape.2);
                if let Some(c) = &ct.prior_mean {
                    check_shape(c, z_shape, "cotangent on mu_z")?;
                    hd.data[..half].copy_from_slice(&c.data);
                }
                if let Some(c) = &ct.prior_sigma {
                    check_shape(c, z_shape, "cotangent on sigma_z")?;
                    for ((d, &g), &s) in hd.data[half..].iter_mut().zip(&c.data).zip(&sigma_z.data) {
                        *d = g * softplus_slope(s);
                    }
                }
                let gh = m.hyper_decoder.vjp(&tapes.hyper, &hd)?;
                Ok((gz, Some(gh)))
            }
        }
    }

    /// Vector-Jacobian product of `(D, sigma, mu_z, sigma_z)` w.r.t. `(z, h)`.
    pub fn vjp_latent(
        &self,
        z: &Tensor,
        h: Option<&Tensor>,
        ct: &OutputCotangents,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let f = self.forward(z, h)?;
        self.backward(&f, ct)
    }

    /// `log N(z; mu_z(h), sigma_z(h)²) + log N(h; 0, I)`, or `log N(z; 0, tau²)`
    /// for the analytic model.
    pub fn latent_prior_logpdf(&self, z: &Tensor, h: Option<&Tensor>) -> Result<f64> {
        let f = self.forward(z, h)?;
        Ok(self.prior_terms(&f, z, h).0)
    }

    /// Prior log-density at a forward pass plus its gradients w.r.t. `z` and `h`.
    pub fn latent_prior_with_grad(
        &self,
        fwd: &CaeForward,
        z: &Tensor,
        h: Option<&Tensor>,
    ) -> Result<(f64, Tensor, Option<Tensor>)> {
        let (value, direct_z, ct) = self.prior_terms(fwd, z, h);
        match self {
            LatentModel::Analytic(_) => Ok((value, direct_z, None)),
            LatentModel::Cae(_) => {
                let h = h.expect("hyper-latent");
                let (_, gh) = self.backward(fwd, &ct)?;
                let mut gh = gh.expect("hyper-latent gradient");
                gh.data.iter_mut().zip(&h.data).for_each(|(g, v)| *g -= v);
                Ok((value, direct_z, Some(gh)))
            }
        }
    }

    /// Value, direct gradient w.r.t. `z`, and cotangents on the hyperprior outputs.
    pub(crate) fn prior_terms(
        &self,
        fwd: &CaeForward,
        z: &Tensor,
        h: Option<&Tensor>,
    ) -> (f64, Tensor, OutputCotangents) {
        match self {
            LatentModel::Analytic(a) => {
                let t2 = a.tau * a.tau;
                let n = z.data.len() as f64;
                let value = -0.5 * z.data.iter().map(|v| v * v).sum::<f64>() / t2
                    - n * (a.tau.ln() + 0.5 * LN_2PI);
                let mut g = z.clone();
                g.data.iter_mut().for_each(|v| *v /= -t2);
                (value, g, OutputCotangents::default())
            }
            LatentModel::Cae(_) => {
                let (mu, sig) = fwd.prior.as_ref().expect("hyperprior outputs");
                let h = h.expect("hyper-latent");
                let zeros = vec![0.0; h.data.len()];
                let ones = vec![1.0; h.data.len()];
                let value = gaussian_logpdf_sum(&z.data, &mu.data, &sig.data)
                    + gaussian_logpdf_sum(&h.data, &zeros, &ones);
                let mut gz = z.clone();
                let mut gmu = mu.clone();
                let mut gsig = sig.clone();
                for i in 0..z.data.len() {
                    let s = sig.data[i];
                    let r = z.data[i] - mu.data[i];
                    gz.data[i] = -r / (s * s);
                    gmu.data[i] = r / (s * s);
                    gsig.data[i] = -1.0 / s + r * r / (s * s * s);
                }
                (
                    value,
                    gz,
                    OutputCotangents {
                        prior_mean: Some(gmu),
                        prior_sigma: Some(gsig),
                        ..OutputCotangents::default()
                    },
                )
            }
        }
    }

    /// Deterministic encoder means `(z_bar, h_bar)`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        match self {
            LatentModel::Analytic(a) => {
                check_shape(x, a.dims().image, "image")?;
                Ok((Tensor::from_vec(1, a.height, a.width, a.apply_wt(&x.data))?, None))
            }
            LatentModel::Cae(m) => {
                m.dims(x.shape())?;
                let z = m.encoder.forward(x)?;
                let h = m.hyper_encoder.forward(&z)?;
                Ok((z, Some(h)))
            }
        }
    }
}
