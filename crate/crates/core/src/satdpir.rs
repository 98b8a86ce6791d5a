//! Half-quadratic splitting with a plug-in denoiser, adapted to signal-dependent
//! noise.
//!
//! Each iteration alternates a data-fit proximal step
//! `x_k = argmin_x -log p(y|x) + mu_k/2 ||x - u_{k-1}||²` and a denoising step
//! `u_k = denoise(x_k, sigma_d(k))` with `mu_k = lambda / sigma_d(k)²`.
//!
//! The exact data-fit step has no closed form under signal-dependent variance.
//! It is initialized with the closed-form solution for the fixed variance
//! `sigma0² + K (h * mean(u_{k-1}))`; in [`SolverMode::SatdpirTwoPhase`] the first
//! half of the iterations keeps that initialization as is and the second half
//! refines it with a few gradient steps.

use std::time::Instant;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::denoise::{denoise, DenoiserSpec};
use crate::error::{Error, Result};
use crate::fft::{fft2_complex, ifft2_complex, transfer_function};
use crate::forward::{evaluate_likelihood, ForwardModel};
use crate::image::ImageGrid;
use crate::ops::bicubic_upsample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Gradient descent on the exact data-fit objective at every iteration.
    DpirFullGd,
    /// Closed-form fixed-variance step for the first half, short refinement after.
    SatdpirTwoPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpirConfig {
    pub n_iters: usize,
    pub sigma1: f64,
    pub lambda: f64,
    pub mode: SolverMode,
    pub phase2_gd_iters: usize,
    /// Gradient step; `None` uses `1 / (max|H|² / sigma0² + mu_k)`.
    pub phase2_step: Option<f64>,
    /// Gradient steps per iteration in [`SolverMode::DpirFullGd`].
    pub full_gd_iters: usize,
    /// Skip gradient refinement entirely when `k_gain == 0`, since the
    /// closed-form step is then already exact.
    pub skip_gd_when_fixed_variance: bool,
}

impl Default for DpirConfig {
    fn default() -> Self {
        Self {
            n_iters: 8,
            sigma1: 20.0 / 255.0,
            lambda: 0.23,
            mode: SolverMode::SatdpirTwoPhase,
            phase2_gd_iters: 5,
            phase2_step: None,
            full_gd_iters: 100,
            skip_gd_when_fixed_variance: false,
        }
    }
}

impl DpirConfig {
    pub fn validate(&self, sigma2: f64) -> Result<()> {
        if self.n_iters < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_iters must be at least 2, got {}",
                self.n_iters
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.sigma1 > sigma2) {
            return Err(Error::InvalidParameter(format!(
                "sigma1 ({}) must exceed the noise floor sigma2 ({})",
                self.sigma1, sigma2
            )));
        }
        Ok(())
    }

    /// Number of leading iterations that use the closed-form step alone.
    pub fn phase1_len(&self) -> usize {
        self.n_iters.div_ceil(2)
    }
}

/// Log-spaced denoiser levels from `cfg.sigma1` down to `sigma2`, endpoints exact.
pub fn noise_schedule(cfg: &DpirConfig, sigma2: f64) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    cfg.validate(sigma2)?;
    let n = cfg.n_iters;
    let (l1, l2) = (cfg.sigma1.ln(), sigma2.ln());
    let mut s: Vec<f64> = (0..n)
        .map(|k| (l1 + (l2 - l1) * k as f64 / (n - 1) as f64).exp())
        .collect();
    s[0] = cfg.sigma1;
    s[n - 1] = sigma2;
    Ok(s)
}

/// Exact minimizer of `||y - D(h * x)||² / (2 sigma_bar²) + mu/2 ||x - u||²`.
///
/// Solved in the Fourier domain. With `r = Aᵀy / sigma_bar² + mu u` and `A = D H`,
/// Woodbury gives `x = (r - Hᴴ Dᵀ (mu sigma_bar² + A Aᵀ)⁻¹ A r) / mu`; `A Aᵀ` is
/// diagonal on the coarse grid with entries equal to the mean of `|H|²` over the
/// `s²` frequencies that alias onto each coarse frequency.
pub fn prox_datafit_fixed_sigma(
    y: &ImageGrid,
    u: &ImageGrid,
    mu: f64,
    sigma_bar: f64,
    fm: &ForwardModel,
) -> Result<ImageGrid> {
    if !(mu > 0.0) || !(sigma_bar > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu and sigma_bar must be positive, got {mu} and {sigma_bar}"
        )));
    }
    let (hh, ww) = u.shape();
    let (hl, wl) = fm.measurement_shape((hh, ww))?;
    if y.shape() != (hl, wl) {
        return Err(Error::Dimension(format!(
            "measurement {}x{} does not match {}x{} at scale {}",
            y.height(),
            y.width(),
            hh,
            ww,
            fm.scale
        )));
    }
    let s2 = sigma_bar * sigma_bar;
    let hspec = transfer_function(&fm.kernel, hh, ww)?;

    let mut r = fm.apply_adjoint(y)?;
    r.scale(1.0 / s2);
    r.axpy(mu, u);
    let mut rs: Vec<Complex64> = r.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_complex(&mut rs, hh, ww);

    // Coarse-grid quantities: mean over aliases of H·R and |H|².
    let inv_alias = 1.0 / (fm.scale * fm.scale) as f64;
    let mut num = vec![Complex64::new(0.0, 0.0); hl * wl];
    let mut den = vec![0.0; hl * wl];
    for k in 0..hh {
        for l in 0..ww {
            let i = k * ww + l;
            let j = (k % hl) * wl + l % wl;
            let hv = hspec.data[i];
            num[j] += hv * rs[i] * inv_alias;
            den[j] += hv.norm_sqr() * inv_alias;
        }
    }
    let reg = mu * s2;
    for (n, d) in num.iter_mut().zip(&den) {
        *n /= reg + d;
    }
    for k in 0..hh {
        for l in 0..ww {
            let i = k * ww + l;
            let j = (k % hl) * wl + l % wl;
            rs[i] = (rs[i] - hspec.data[i].conj() * num[j]) / mu;
        }
    }
    ifft2_complex(&mut rs, hh, ww);
    ImageGrid::new(hh, ww, rs.into_iter().map(|c| c.re).collect())
}

/// Result of the gradient refinement of the exact data-fit step.
#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub x: ImageGrid,
    pub objective: f64,
    pub steps_taken: usize,
    pub final_step: f64,
    /// The step collapsed below `1e-12` without finding a decrease.
    pub stalled: bool,
    pub clamped_pixels: usize,
}

/// `-log p(y|x) + mu/2 ||x - u||²`.
pub fn datafit_objective(
    x: &ImageGrid,
    y: &ImageGrid,
    u: &ImageGrid,
    mu: f64,
    fm: &ForwardModel,
) -> Result<f64> {
    let nll = evaluate_likelihood(x, y, fm, false)?.value;
    let d: f64 = x
        .data()
        .iter()
        .zip(u.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(nll + 0.5 * mu * d)
}

/// Default refinement step `1 / L` with `L = max|H|² / sigma0² + mu`.
pub fn default_gd_step(fm: &ForwardModel, shape: (usize, usize), mu: f64) -> Result<f64> {
    let hspec = transfer_function(&fm.kernel, shape.0, shape.1)?;
    let hmax = hspec.data.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    Ok(1.0 / (hmax / (fm.sigma0 * fm.sigma0) + mu))
}

/// `n_gd` monotone gradient-descent steps on the exact data-fit objective from
/// `x_init`, halving the step whenever a trial step would increase it.
pub fn prox_datafit_exact(
    y: &ImageGrid,
    u: &ImageGrid,
    mu: f64,
    fm: &ForwardModel,
    x_init: &ImageGrid,
    n_gd: usize,
    step: f64,
) -> Result<ProxOutcome> {
    if !(mu > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu and step must be positive, got {mu} and {step}"
        )));
    }
    x_init.ensure_same_shape(u)?;
    let mut x = x_init.clone();
    let mut eval = evaluate_likelihood(&x, y, fm, true)?;
    let prox_term = |x: &ImageGrid| {
        x.data()
            .iter()
            .zip(u.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * 0.5
            * mu
    };
    let mut f = eval.value + prox_term(&x);
    let mut step = step;
    let mut stalled = false;
    let mut taken = 0;
    let mut clamped = eval.clamped_pixels;
    for _ in 0..n_gd {
        let mut g = eval.gradient.take().expect("gradient requested");
        for ((gv, xv), uv) in g.data_mut().iter_mut().zip(x.data()).zip(u.data()) {
            *gv += mu * (xv - uv);
        }
        loop {
            let mut cand = x.clone();
            cand.axpy(-step, &g);
            let cand_eval = evaluate_likelihood(&cand, y, fm, true)?;
            let fc = cand_eval.value + prox_term(&cand);
            if fc.is_finite() && fc <= f {
                x = cand;
                f = fc;
                clamped = cand_eval.clamped_pixels;
                eval = cand_eval;
                taken += 1;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                stalled = true;
                break;
            }
        }
        if stalled {
            break;
        }
    }
    Ok(ProxOutcome {
        x,
        objective: f,
        steps_taken: taken,
        final_step: step,
        stalled,
        clamped_pixels: clamped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sigma_d: f64,
    pub mu: f64,
    pub sigma_bar: f64,
    /// Exact data-fit objective at `x_k`.
    pub objective: f64,
    pub gd_steps: usize,
    pub stalled: bool,
    pub clamped_pixels: usize,
    pub datafit_ms: f64,
    pub denoise_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestoreReport {
    pub mode: SolverMode,
    pub denoiser: String,
    pub iterations: Vec<IterationRecord>,
    pub stalls: usize,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RestoreOutput {
    pub image: ImageGrid,
    pub report: RestoreReport,
}

/// Initial `u_0`: the measurement itself, bicubically upsampled when `scale = 2`.
pub fn initial_estimate(y: &ImageGrid, fm: &ForwardModel) -> Result<ImageGrid> {
    bicubic_upsample(y, fm.scale)
}

pub fn restore(
    y: &ImageGrid,
    fm: &ForwardModel,
    denoiser: &DenoiserSpec,
    cfg: &DpirConfig,
) -> Result<RestoreOutput> {
    fm.validate()?;
    let sigmas = noise_schedule(cfg, fm.sigma0)?;
    let start = Instant::now();
    let mut u = initial_estimate(y, fm)?;
    let shape = u.shape();
    let mass = fm.kernel.mass();
    let phase1 = cfg.phase1_len();
    let mut records = Vec::with_capacity(cfg.n_iters);
    for (k, &sigma_d) in sigmas.iter().enumerate() {
        let t0 = Instant::now();
        let mu = cfg.lambda / (sigma_d * sigma_d);
        let sigma_bar = fm.variance(u.mean() * mass).sqrt();
        let x0 = prox_datafit_fixed_sigma(y, &u, mu, sigma_bar, fm)?;
        let n_gd = match cfg.mode {
            SolverMode::SatdpirTwoPhase if k < phase1 => 0,
            SolverMode::SatdpirTwoPhase => cfg.phase2_gd_iters,
            SolverMode::DpirFullGd => cfg.full_gd_iters,
        };
        let n_gd = if cfg.skip_gd_when_fixed_variance && fm.k_gain == 0.0 {
            0
        } else {
            n_gd
        };
        let step = match cfg.phase2_step {
            Some(s) => s,
            None => default_gd_step(fm, shape, mu)?,
        };
        let outcome = prox_datafit_exact(y, &u, mu, fm, &x0, n_gd, step)?;
        let datafit_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        u = denoise(&outcome.x, sigma_d, denoiser)?;
        if !u.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite estimate after iteration {k}"
            )));
        }
        records.push(IterationRecord {
            iteration: k,
            sigma_d,
            mu,
            sigma_bar,
            objective: outcome.objective,
            gd_steps: outcome.steps_taken,
            stalled: outcome.stalled,
            clamped_pixels: outcome.clamped_pixels,
            datafit_ms,
            denoise_ms: t1.elapsed().as_secs_f64() * 1e3,
        });
    }
    let stalls = records.iter().filter(|r| r.stalled).count();
    Ok(RestoreOutput {
        image: u,
        report: RestoreReport {
            mode: cfg.mode,
            denoiser: denoiser.name().to_string(),
            iterations: records,
            stalls,
            total_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}
