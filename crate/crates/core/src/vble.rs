//! Variational Bayes restoration in the latent space of an autoencoder.
//!
//! The approximate posterior is `q(z) = prod U(z_k; z_bar_k ± a_k/2)` (and the
//! same for the hyper-latent `h`). In [`VbleMode::VbleXz`] the image is also a
//! latent variable with `q(x|z) = N(D(z), diag(b² sigma(z)²))`. Parameters are
//! fitted by stochastic ascent on
//!
//! `E_q[log p(y|x) + lambda log p(z, h)] + lambda [sum log a + sum log a_h + sum (log b - b²/2)]`
//!
//! using reparameterized samples `z = z_bar + a u`, `u ~ U(-1/2, 1/2)` and
//! `x = D(z) + b sigma(z) eps`.

use serde::{Deserialize, Serialize};

use crate::cae::{image_to_tensor, tensor_to_image, LatentModel, OutputCotangents};
use crate::error::{Error, Result};
use crate::forward::{evaluate_likelihood, ForwardModel};
use crate::image::ImageGrid;
use crate::nn::{Shape, Tensor};
use crate::ops::bicubic_upsample;
use crate::rng::Rng;
use crate::uncertainty::deviation_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbleMode {
    /// Latent-only posterior; samples are `D(z)`.
    Vble,
    /// Joint latent/image posterior.
    VbleXz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BResolution {
    PerPixel,
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// The step decays geometrically to `step * final_step_fraction` at the
    /// last iteration.
    pub final_step_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            final_step_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VbleConfig {
    pub mode: VbleMode,
    pub lambda: f64,
    pub n_opt_iters: usize,
    pub mc_samples_per_step: usize,
    pub optimizer: AdamConfig,
    pub n_posterior_samples: usize,
    pub seed: u64,
    pub b_resolution: BResolution,
    /// Initial uniform width of every latent entry.
    pub init_width: f64,
}

impl Default for VbleConfig {
    fn default() -> Self {
        Self {
            mode: VbleMode::VbleXz,
            lambda: 0.6,
            n_opt_iters: 1000,
            mc_samples_per_step: 1,
            optimizer: AdamConfig::default(),
            n_posterior_samples: 100,
            seed: 0,
            b_resolution: BResolution::PerPixel,
            init_width: 1.0,
        }
    }
}

impl VbleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.n_opt_iters == 0 || self.mc_samples_per_step == 0 {
            return Err(Error::InvalidParameter(
                "n_opt_iters and mc_samples_per_step must be at least 1".into(),
            ));
        }
        if !(self.init_width > 0.0) || !(self.optimizer.step > 0.0) {
            return Err(Error::InvalidParameter(
                "init_width and optimizer step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Variational parameters. Widths are stored as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub z_bar: Tensor,
    pub log_a: Tensor,
    pub h_bar: Option<Tensor>,
    pub log_a_h: Option<Tensor>,
    /// Image-space scale; `None` means `b = 0` (latent-only posterior).
    /// Either image-shaped or `C x 1 x 1` (one value per channel).
    pub log_b: Option<Tensor>,
}

fn filled(s: Shape, v: f64) -> Tensor {
    Tensor {
        channels: s.0,
        height: s.1,
        width: s.2,
        data: vec![v; s.0 * s.1 * s.2],
    }
}

fn zeros_like(t: &Tensor) -> Tensor {
    filled(t.shape(), 0.0)
}

impl VariationalState {
    pub fn a(&self) -> Tensor {
        exp_tensor(&self.log_a)
    }

    pub fn b(&self) -> Option<Tensor> {
        self.log_b.as_ref().map(exp_tensor)
    }

    fn parts(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.z_bar, &self.log_a];
        v.extend(self.h_bar.iter());
        v.extend(self.log_a_h.iter());
        v.extend(self.log_b.iter());
        v
    }

    fn parts_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.z_bar, &mut self.log_a];
        v.extend(self.h_bar.iter_mut());
        v.extend(self.log_a_h.iter_mut());
        v.extend(self.log_b.iter_mut());
        v
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.parts().into_iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.parts_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        debug_assert_eq!(off, flat.len());
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            z_bar: zeros_like(&self.z_bar),
            log_a: zeros_like(&self.log_a),
            h_bar: self.h_bar.as_ref().map(zeros_like),
            log_a_h: self.log_a_h.as_ref().map(zeros_like),
            log_b: self.log_b.as_ref().map(zeros_like),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.parts()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn exp_tensor(t: &Tensor) -> Tensor {
    Tensor {
        data: t.data.iter().map(|v| v.exp()).collect(),
        ..t.clone()
    }
}

/// Value of `b` at flat image index `i`.
fn b_at(b: &Tensor, image: Shape, i: usize) -> f64 {
    if b.data.len() == image.0 * image.1 * image.2 {
        b.data[i]
    } else {
        b.data[i / (image.1 * image.2)]
    }
}

/// Noise realization for one ELBO sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub u: Tensor,
    pub u_h: Option<Tensor>,
    pub eps: Option<Tensor>,
}

impl ElboNoise {
    pub fn draw(state: &VariationalState, image: Shape, rng: &mut Rng) -> Self {
        let mut uniform = |s: Shape| {
            let mut t = filled(s, 0.0);
            rng.fill_centered_uniform(&mut t.data);
            t
        };
        let u = uniform(state.z_bar.shape());
        let u_h = state.h_bar.as_ref().map(|h| uniform(h.shape()));
        let eps = state.log_b.as_ref().map(|_| {
            let mut t = filled(image, 0.0);
            rng.fill_gaussian(&mut t.data);
            t
        });
        Self { u, u_h, eps }
    }
}

#[derive(Debug, Clone)]
pub struct ElboEstimate {
    pub value: f64,
    /// Ascent direction: gradients w.r.t. `z_bar`, `log a`, `h_bar`, `log a_h`, `log b`.
    pub grads: VariationalState,
    pub clamped_pixels: usize,
}

fn latent_sample(mean: &Tensor, log_w: &Tensor, u: &Tensor) -> Tensor {
    Tensor {
        data: mean
            .data
            .iter()
            .zip(&log_w.data)
            .zip(&u.data)
            .map(|((m, lw), u)| m + lw.exp() * u)
            .collect(),
        ..mean.clone()
    }
}

/// Image drawn from `q` for a given noise realization.
fn draw_image(
    state: &VariationalState,
    model: &LatentModel,
    noise: &ElboNoise,
) -> Result<(Tensor, crate::cae::CaeForward, Tensor, Option<Tensor>)> {
    let z = latent_sample(&state.z_bar, &state.log_a, &noise.u);
    let h = match (&state.h_bar, &state.log_a_h, &noise.u_h) {
        (Some(hb), Some(la), Some(uh)) => Some(latent_sample(hb, la, uh)),
        (None, None, _) => None,
        _ => return Err(Error::Dimension("inconsistent hyper-latent state".into())),
    };
    let fwd = model.forward(&z, h.as_ref())?;
    let mut x = fwd.mean.clone();
    if let (Some(lb), Some(eps)) = (&state.log_b, &noise.eps) {
        let image = x.shape();
        for i in 0..x.data.len() {
            x.data[i] += b_at(lb, image, i).exp() * fwd.sigma.data[i] * eps.data[i];
        }
    }
    Ok((x, fwd, z, h))
}

/// Objective and gradient for a fixed noise realization (common random numbers).
pub fn elbo_with_noise(
    state: &VariationalState,
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    lambda: f64,
    noise: &ElboNoise,
) -> Result<ElboEstimate> {
    let (x, fwd, z, h) = draw_image(state, model, noise)?;
    let image = x.shape();
    let x_img = tensor_to_image(&x).map_err(|e| Error::Numerical(format!("sampled image: {e}")))?;
    let lik = evaluate_likelihood(&x_img, y, fm, true)?;
    let (prior, prior_gz, prior_ct) = model.prior_terms(&fwd, &z, h.as_ref());

    let mut value = -lik.value + lambda * prior;
    value += lambda * state.log_a.data.iter().sum::<f64>();
    if let Some(la) = &state.log_a_h {
        value += lambda * la.data.iter().sum::<f64>();
    }
    if let Some(lb) = &state.log_b {
        value += lambda
            * lb.data
                .iter()
                .map(|l| l - 0.5 * (2.0 * l).exp())
                .sum::<f64>();
    }

    // d value / d x (ascent direction)
    let mut gx = image_to_tensor(&lik.gradient.expect("requested"));
    gx.data.iter_mut().for_each(|v| *v = -*v);

    let mut grads = state.zeros_like();
    let mut ct = OutputCotangents {
        mean: Some(gx.clone()),
        sigma: None,
        prior_mean: prior_ct.prior_mean.map(|mut t| {
            t.data.iter_mut().for_each(|v| *v *= lambda);
            t
        }),
        prior_sigma: prior_ct.prior_sigma.map(|mut t| {
            t.data.iter_mut().for_each(|v| *v *= lambda);
            t
        }),
    };
    if let (Some(lb), Some(eps)) = (&state.log_b, &noise.eps) {
        let mut cs = zeros_like(&gx);
        let g_lb = grads.log_b.as_mut().expect("shaped like state");
        let per_pixel = lb.data.len() == gx.data.len();
        for i in 0..gx.data.len() {
            let b = b_at(lb, image, i).exp();
            cs.data[i] = gx.data[i] * b * eps.data[i];
            let d = gx.data[i] * fwd.sigma.data[i] * eps.data[i] * b;
            if per_pixel {
                g_lb.data[i] += d;
            } else {
                g_lb.data[i / (image.1 * image.2)] += d;
            }
        }
        for (g, l) in g_lb.data.iter_mut().zip(&lb.data) {
            *g += lambda * (1.0 - (2.0 * l).exp());
        }
        ct.sigma = Some(cs);
    }
    let (mut gz, gh) = model.backward(&fwd, &ct)?;
    gz.data
        .iter_mut()
        .zip(&prior_gz.data)
        .for_each(|(g, p)| *g += lambda * p);

    grads.z_bar.data.copy_from_slice(&gz.data);
    for i in 0..gz.data.len() {
        grads.log_a.data[i] = gz.data[i] * noise.u.data[i] * state.log_a.data[i].exp() + lambda;
    }
    if let (Some(mut gh), Some(h), Some(la), Some(uh)) =
        (gh, h.as_ref(), &state.log_a_h, &noise.u_h)
    {
        // The standard-normal p(h) term: d/dh log N(h; 0, I) = -h.
        gh.data
            .iter_mut()
            .zip(&h.data)
            .for_each(|(g, v)| *g -= lambda * v);
        let g_la = grads.log_a_h.as_mut().expect("shaped like state");
        for i in 0..gh.data.len() {
            g_la.data[i] = gh.data[i] * uh.data[i] * la.data[i].exp() + lambda;
        }
        grads
            .h_bar
            .as_mut()
            .expect("shaped like state")
            .data
            .copy_from_slice(&gh.data);
    }
    Ok(ElboEstimate {
        value,
        grads,
        clamped_pixels: lik.clamped_pixels,
    })
}

/// Monte Carlo estimate averaged over `n_samples` fresh noise draws.
pub fn elbo_estimate_mc(
    state: &VariationalState,
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    lambda: f64,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    let image = model.dims(image_shape(y, fm)?)?.image;
    let mut acc: Option<ElboEstimate> = None;
    for _ in 0..n_samples.max(1) {
        let noise = ElboNoise::draw(state, image, rng);
        let e = elbo_with_noise(state, y, fm, model, lambda, &noise)?;
        acc = Some(match acc {
            None => e,
            Some(mut a) => {
                a.value += e.value;
                a.clamped_pixels += e.clamped_pixels;
                let mut flat = a.grads.to_flat();
                flat.iter_mut().zip(e.grads.to_flat()).for_each(|(x, y)| *x += y);
                a.grads.set_flat(&flat);
                a
            }
        });
    }
    let mut a = acc.expect("at least one sample");
    let n = n_samples.max(1) as f64;
    a.value /= n;
    let flat: Vec<f64> = a.grads.to_flat().into_iter().map(|v| v / n).collect();
    a.grads.set_flat(&flat);
    Ok(a)
}

/// Single-sample estimate of the objective and its gradient.
pub fn elbo_estimate(
    state: &VariationalState,
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    lambda: f64,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    elbo_estimate_mc(state, y, fm, model, lambda, 1, rng)
}

fn image_shape(y: &ImageGrid, fm: &ForwardModel) -> Result<Shape> {
    if fm.scale == 0 {
        return Err(Error::InvalidParameter("scale must be positive".into()));
    }
    Ok(Shape(1, y.height() * fm.scale, y.width() * fm.scale))
}

/// Encoder-based initialization: `z_bar = encode(bicubic(y))`, unit-scaled
/// widths, `b = 1`.
pub fn initial_state(
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    cfg: &VbleConfig,
) -> Result<VariationalState> {
    let up = bicubic_upsample(y, fm.scale)?;
    let x0 = image_to_tensor(&up);
    let dims = model.dims(x0.shape())?;
    let (z_bar, h_bar) = model.encode(&x0)?;
    let lw = cfg.init_width.ln();
    let log_b = match cfg.mode {
        VbleMode::Vble => None,
        VbleMode::VbleXz => Some(match cfg.b_resolution {
            BResolution::PerPixel => filled(dims.image, 0.0),
            BResolution::PerChannel => filled(Shape(dims.image.0, 1, 1), 0.0),
        }),
    };
    Ok(VariationalState {
        log_a: filled(z_bar.shape(), lw),
        log_a_h: h_bar.as_ref().map(|h| filled(h.shape(), lw)),
        z_bar,
        h_bar,
        log_b,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: VariationalState,
    /// ELBO estimate at every iteration (rejected steps included).
    pub trace: Vec<f64>,
    pub rejected_steps: usize,
    pub warning: Option<String>,
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step on `params` along `grad` with step size `lr`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] += lr * mh / (vh.sqrt() + c.epsilon);
        }
    }
}

/// Fit the variational parameters from the encoder initialization.
pub fn fit(
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    cfg: &VbleConfig,
) -> Result<FitResult> {
    let init = initial_state(y, fm, model, cfg)?;
    fit_from(init, y, fm, model, cfg)
}

pub fn fit_from(
    mut state: VariationalState,
    y: &ImageGrid,
    fm: &ForwardModel,
    model: &LatentModel,
    cfg: &VbleConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    fm.validate()?;
    let mut rng = Rng::with_stream(cfg.seed, 1);
    let mut params = state.to_flat();
    let mut adam = Adam::new(cfg.optimizer, params.len());
    let mut trace = Vec::with_capacity(cfg.n_opt_iters);
    let mut rejected = 0;
    let n = cfg.n_opt_iters;
    for k in 0..n {
        let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
        let lr = cfg.optimizer.step * cfg.optimizer.final_step_fraction.powf(frac);
        let est = elbo_estimate_mc(&state, y, fm, model, cfg.lambda, cfg.mc_samples_per_step, &mut rng);
        let est = match est {
            Ok(e) if e.value.is_finite() && e.grads.all_finite() => e,
            Ok(_) | Err(Error::Numerical(_)) => {
                rejected += 1;
                trace.push(f64::NAN);
                continue;
            }
            Err(e) => return Err(e),
        };
        trace.push(est.value);
        let mut candidate = params.clone();
        adam.step(&mut candidate, &est.grads.to_flat(), lr);
        if candidate.iter().all(|v| v.is_finite()) {
            params = candidate;
            state.set_flat(&params);
        } else {
            rejected += 1;
        }
    }
    let warning = (rejected * 10 > n).then(|| {
        format!("{rejected} of {n} optimization steps were rejected (non-finite objective)")
    });
    Ok(FitResult {
        state,
        trace,
        rejected_steps: rejected,
        warning,
    })
}

/// `n` images drawn from the fitted posterior. Sample `i` uses substream `i`
/// of `rng`, so samples can be generated independently.
pub fn sample_posterior(
    state: &VariationalState,
    model: &LatentModel,
    n: usize,
    rng: &Rng,
    mode: VbleMode,
) -> Result<Vec<ImageGrid>> {
    let mut st = state.clone();
    if mode == VbleMode::Vble {
        st.log_b = None;
    }
    let image = model_image_shape(model, &st)?;
    (0..n)
        .map(|i| {
            let mut r = rng.substream(i as u64);
            let noise = ElboNoise::draw(&st, image, &mut r);
            let (x, ..) = draw_image(&st, model, &noise)?;
            tensor_to_image(&x)
        })
        .collect()
}

fn model_image_shape(model: &LatentModel, st: &VariationalState) -> Result<Shape> {
    let fwd = model.forward(&st.z_bar, st.h_bar.as_ref())?;
    Ok(fwd.mean.shape())
}

/// Per-pixel sample mean and `alpha`-quantile of `|sample - mean|`.
pub fn mmse_and_quantiles(samples: &[ImageGrid], alpha: f64) -> Result<(ImageGrid, ImageGrid)> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let mmse = sample_mean(samples)?;
    let q = deviation_quantile(samples, &mmse, alpha)?;
    Ok((mmse, q))
}

pub fn sample_mean(samples: &[ImageGrid]) -> Result<ImageGrid> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("no samples".into()))?;
    let mut m = ImageGrid::zeros(first.height(), first.width());
    for s in samples {
        m.ensure_same_shape(s)?;
        m.axpy(1.0 / samples.len() as f64, s);
    }
    Ok(m)
}

/// Decoded mean of the current latent estimate, `D(z_bar)`.
pub fn decoded_mean(state: &VariationalState, model: &LatentModel) -> Result<ImageGrid> {
    let (mean, _) = model.decode(&state.z_bar, state.h_bar.as_ref())?;
    tensor_to_image(&mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cae::AnalyticCae;
    use crate::image::Kernel;

    fn analytic(n: usize) -> LatentModel {
        LatentModel::Analytic(AnalyticCae::new(n, n, n.min(8), 0.5, 0.05).unwrap())
    }

    fn setup() -> (ImageGrid, ForwardModel, LatentModel) {
        let mut rng = Rng::new(1);
        let y = ImageGrid::from_fn(4, 4, |_, _| 0.3 + 0.4 * rng.uniform());
        let k = Kernel::new(3, 3, vec![0.0, 0.1, 0.0, 0.1, 0.6, 0.1, 0.0, 0.1, 0.0]).unwrap();
        let fm = ForwardModel::new(k, 1, 0.05, 0.01).unwrap();
        (y, fm, analytic(4))
    }

    #[test]
    fn b_terms_peak_at_one() {
        let f = |l: f64| l - 0.5 * (2.0 * l).exp();
        assert!(f(0.0) > f(0.01) && f(0.0) > f(-0.01));
    }

    #[test]
    fn gradient_matches_common_random_number_differences() {
        let (y, fm, model) = setup();
        let cfg = VbleConfig::default();
        let mut state = initial_state(&y, &fm, &model, &cfg).unwrap();
        let mut rng = Rng::new(2);
        state.log_a.data.iter_mut().for_each(|v| *v = -2.0 + 0.5 * rng.gaussian());
        let noise = ElboNoise::draw(&state, Shape(1, 4, 4), &mut rng);
        let est = elbo_with_noise(&state, &y, &fm, &model, 0.6, &noise).unwrap();
        let g = est.grads.to_flat();
        let p0 = state.to_flat();
        let eps = 1e-6;
        for i in 0..p0.len() {
            let mut sp = state.clone();
            let mut sm = state.clone();
            let mut v = p0.clone();
            v[i] += eps;
            sp.set_flat(&v);
            v[i] -= 2.0 * eps;
            sm.set_flat(&v);
            let fp = elbo_with_noise(&sp, &y, &fm, &model, 0.6, &noise).unwrap().value;
            let fmv = elbo_with_noise(&sm, &y, &fm, &model, 0.6, &noise).unwrap().value;
            let fd = (fp - fmv) / (2.0 * eps);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0),
                "param {i}: fd {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn frozen_zero_b_matches_latent_only_mode() {
        let (y, fm, model) = setup();
        let base = VbleConfig {
            n_opt_iters: 20,
            ..VbleConfig::default()
        };
        let a = fit(&y, &fm, &model, &VbleConfig { mode: VbleMode::Vble, ..base.clone() }).unwrap();
        let mut init = initial_state(&y, &fm, &model, &base).unwrap();
        init.log_b = None;
        let b = fit_from(init, &y, &fm, &model, &base).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn fit_is_deterministic() {
        let (y, fm, model) = setup();
        let cfg = VbleConfig {
            n_opt_iters: 30,
            ..VbleConfig::default()
        };
        let a = fit(&y, &fm, &model, &cfg).unwrap();
        let b = fit(&y, &fm, &model, &cfg).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.rejected_steps, 0);
        let rng = Rng::new(3);
        let s1 = sample_posterior(&a.state, &model, 5, &rng, VbleMode::VbleXz).unwrap();
        let s2 = sample_posterior(&a.state, &model, 5, &rng, VbleMode::VbleXz).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn degenerate_widths_collapse_samples() {
        let (y, fm, model) = setup();
        let mut st = initial_state(&y, &fm, &model, &VbleConfig::default()).unwrap();
        st.log_a.data.iter_mut().for_each(|v| *v = -60.0);
        st.log_b.as_mut().unwrap().data.iter_mut().for_each(|v| *v = -60.0);
        let mean = decoded_mean(&st, &model).unwrap();
        for s in sample_posterior(&st, &model, 4, &Rng::new(4), VbleMode::VbleXz).unwrap() {
            for (a, b) in s.data().iter().zip(mean.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantile_examples() {
        let same = vec![ImageGrid::filled(2, 2, 0.3); 3];
        let (m, q) = mmse_and_quantiles(&same, 0.9).unwrap();
        assert!(m.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(q.data().iter().all(|&v| v.abs() < 1e-15));

        let pm = vec![ImageGrid::filled(2, 2, 1.0), ImageGrid::filled(2, 2, -1.0)];
        let (m, q) = mmse_and_quantiles(&pm, 0.9).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(q.data().iter().all(|&v| v == 1.0));

        assert!(mmse_and_quantiles(&pm[..1], 0.9).is_err());
        assert!(mmse_and_quantiles(&pm, 1.0).is_err());
    }

    #[test]
    fn config_defaults() {
        let c = VbleConfig::default();
        assert_eq!(c.lambda, 0.6);
        assert_eq!(c.n_posterior_samples, 100);
        assert_eq!(c.mc_samples_per_step, 1);
        assert!(VbleConfig { lambda: 0.0, ..c.clone() }.validate().is_err());
        assert!(VbleConfig { n_opt_iters: 0, ..c }.validate().is_err());
    }
}
