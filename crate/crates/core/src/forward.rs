//! Degradation model `y = D(h * x) + w` with signal-dependent Gaussian noise
//! `w ~ N(0, sigma0^2 + K * D(h * x))`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageGrid, Kernel};
use crate::io;
use crate::ops::{blur_decimate, blur_decimate_adjoint, convolve_circular};
use crate::rng::Rng;

/// Variance floor, as a fraction of `sigma0^2`, applied when `sigma0^2 + K m` would
/// fall below it (only possible for negative mean signal).
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub kernel: Kernel,
    /// Decimation factor between target and measurement grids (1 or 2).
    pub scale: usize,
    /// Noise floor standard deviation, normalized units.
    pub sigma0: f64,
    /// Signal-dependent variance gain.
    pub k_gain: f64,
    /// Round simulated measurements to the 12-bit grid.
    pub quantize: bool,
    /// Include the variance-through-signal and log-det terms in the likelihood
    /// gradient. Turning this off leaves a weighted least-squares gradient.
    pub variance_gradient: bool,
}

impl ForwardModel {
    pub fn new(kernel: Kernel, scale: usize, sigma0: f64, k_gain: f64) -> Result<Self> {
        let fm = Self {
            kernel,
            scale,
            sigma0,
            k_gain,
            quantize: false,
            variance_gradient: true,
        };
        fm.validate()?;
        Ok(fm)
    }

    pub fn with_quantize(mut self, quantize: bool) -> Self {
        self.quantize = quantize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma0 must be positive, got {}",
                self.sigma0
            )));
        }
        if !(self.k_gain >= 0.0 && self.k_gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "k_gain must be nonnegative, got {}",
                self.k_gain
            )));
        }
        if self.scale != 1 && self.scale != 2 {
            return Err(Error::InvalidParameter(format!(
                "scale must be 1 or 2, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn variance_floor(&self) -> f64 {
        self.sigma0 * self.sigma0 * VARIANCE_FLOOR_FRACTION
    }

    /// Noise variance for mean signal `m`, clamped at the floor.
    #[inline]
    pub fn variance(&self, m: f64) -> f64 {
        (self.sigma0 * self.sigma0 + self.k_gain * m).max(self.variance_floor())
    }

    /// Measurement-grid shape for a target-grid shape.
    pub fn measurement_shape(&self, target: (usize, usize)) -> Result<(usize, usize)> {
        if target.0 % self.scale != 0 || target.1 % self.scale != 0 {
            return Err(Error::Dimension(format!(
                "{}x{} target not divisible by scale {}",
                target.0, target.1, self.scale
            )));
        }
        Ok((target.0 / self.scale, target.1 / self.scale))
    }

    /// Noiseless measurement `D(h * x)`.
    pub fn apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        blur_decimate(x, &self.kernel, self.scale)
    }

    /// `hᵀ * Dᵀ r`.
    pub fn apply_adjoint(&self, r: &ImageGrid) -> Result<ImageGrid> {
        blur_decimate_adjoint(r, &self.kernel, self.scale)
    }

    fn check_pair(&self, x: &ImageGrid, y: &ImageGrid) -> Result<()> {
        let expected = self.measurement_shape(x.shape())?;
        if y.shape() != expected {
            return Err(Error::Dimension(format!(
                "measurement is {}x{}, target {}x{} with scale {} needs {}x{}",
                y.height(),
                y.width(),
                x.height(),
                x.width(),
                self.scale,
                expected.0,
                expected.1
            )));
        }
        Ok(())
    }
}

/// Simulate a measurement from `x`.
pub fn degrade(x: &ImageGrid, fm: &ForwardModel, rng: &mut Rng) -> Result<ImageGrid> {
    fm.validate()?;
    let mut y = fm.apply(x)?;
    for v in y.data_mut() {
        let var = fm.sigma0 * fm.sigma0 + fm.k_gain * v.max(0.0);
        *v += var.sqrt() * rng.gaussian();
        if fm.quantize {
            *v = quantize_12bit(*v);
        }
    }
    Ok(y)
}

/// Round to the nearest 12-bit count within the sensor range, then renormalize.
pub fn quantize_12bit(v: f64) -> f64 {
    (v * io::FULL_SCALE).round().clamp(0.0, io::FULL_SCALE) / io::FULL_SCALE
}

/// Likelihood value, optional gradient, and how many measurement pixels hit the
/// variance floor.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub value: f64,
    pub gradient: Option<ImageGrid>,
    pub clamped_pixels: usize,
}

/// `0.5 (y - m)ᵀ Σ⁻¹ (y - m) + 0.5 log|Σ|` with `m = D(h * x)`,
/// `Σ = diag(sigma0^2 + K m)`, dropping the `N/2 log 2π` constant.
pub fn evaluate_likelihood(
    x: &ImageGrid,
    y: &ImageGrid,
    fm: &ForwardModel,
    with_gradient: bool,
) -> Result<LikelihoodEval> {
    fm.check_pair(x, y)?;
    let m = fm.apply(x)?;
    let floor = fm.variance_floor();
    let s2 = fm.sigma0 * fm.sigma0;
    let mut value = 0.0;
    let mut clamped = 0;
    let mut dm = if with_gradient {
        Some(ImageGrid::zeros(m.height(), m.width()))
    } else {
        None
    };
    for (i, (&mi, &yi)) in m.data().iter().zip(y.data()).enumerate() {
        let raw = s2 + fm.k_gain * mi;
        let (var, dvar) = if raw < floor {
            clamped += 1;
            (floor, 0.0)
        } else {
            (raw, fm.k_gain)
        };
        let r = yi - mi;
        value += 0.5 * r * r / var + 0.5 * var.ln();
        if let Some(g) = dm.as_mut() {
            // d/dm of 0.5 r²/v + 0.5 ln v, with r = y - m and v = v(m).
            let mut d = -r / var;
            if fm.variance_gradient {
                d += dvar * (0.5 / var - 0.5 * r * r / (var * var));
            }
            g.data_mut()[i] = d;
        }
    }
    let gradient = match dm {
        Some(g) => Some(fm.apply_adjoint(&g)?),
        None => None,
    };
    Ok(LikelihoodEval {
        value,
        gradient,
        clamped_pixels: clamped,
    })
}

pub fn neg_log_likelihood(x: &ImageGrid, y: &ImageGrid, fm: &ForwardModel) -> Result<f64> {
    Ok(evaluate_likelihood(x, y, fm, false)?.value)
}

pub fn grad_neg_log_likelihood(
    x: &ImageGrid,
    y: &ImageGrid,
    fm: &ForwardModel,
) -> Result<ImageGrid> {
    Ok(evaluate_likelihood(x, y, fm, true)?
        .gradient
        .expect("gradient requested"))
}

/// Isotropic Gaussian PSF parameterized by its MTF at the Nyquist frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtfSpec {
    pub mtf_at_nyquist: f64,
    pub kernel_size: usize,
}

fn gaussian_taps(width: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|d| (-(d * d) as f64 / (2.0 * width * width)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

fn nyquist_response(taps: &[f64]) -> f64 {
    let c = taps.len() / 2;
    taps.iter()
        .enumerate()
        .map(|(i, t)| if (i + c) % 2 == 0 { *t } else { -*t })
        .sum()
}

/// MTF of `h` at (f_e/2, 0) and (0, f_e/2): the magnitude of its DTFT at the
/// horizontal and vertical Nyquist frequencies, relative to its DC gain.
pub fn measure_mtf(h: &Kernel) -> (f64, f64) {
    let (ch, cw) = (h.height() / 2, h.width() / 2);
    let mut horiz = 0.0;
    let mut vert = 0.0;
    for r in 0..h.height() {
        for c in 0..h.width() {
            let t = h.tap(r, c);
            horiz += if (c + cw) % 2 == 0 { t } else { -t };
            vert += if (r + ch) % 2 == 0 { t } else { -t };
        }
    }
    let dc = h.mass();
    ((horiz / dc).abs(), (vert / dc).abs())
}

/// Gaussian width whose continuous transfer function equals `mtf` at Nyquist:
/// `exp(-π² w² / 2) = mtf`.
pub fn continuous_gaussian_width(mtf: f64) -> f64 {
    (-2.0 * mtf.ln()).sqrt() / std::f64::consts::PI
}

/// Build a normalized separable Gaussian kernel whose sampled response at Nyquist
/// equals `spec.mtf_at_nyquist`.
///
/// The continuous-domain width is the starting guess; sampling aliases the
/// response upward for narrow kernels, so the width is then refined by bisection
/// on the discrete response.
pub fn psf_from_mtf(spec: &MtfSpec) -> Result<Kernel> {
    let target = spec.mtf_at_nyquist;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "MTF at Nyquist must lie in (0, 1), got {target}"
        )));
    }
    if spec.kernel_size % 2 == 0 || spec.kernel_size < 3 {
        return Err(Error::InvalidParameter(format!(
            "kernel size must be odd and at least 3, got {}",
            spec.kernel_size
        )));
    }
    let radius = spec.kernel_size / 2;
    let response = |w: f64| nyquist_response(&gaussian_taps(w, radius));

    // Walk widths upward until the response crosses the target; the response
    // decreases from 1 until truncation by the kernel support takes over.
    let guess = continuous_gaussian_width(target);
    let mut lo = 1e-3;
    let mut prev = response(lo);
    let mut hi = None;
    let mut best = prev;
    let mut w = lo;
    let limit = 4.0 * spec.kernel_size as f64;
    let step = (guess / 16.0).max(1e-3);
    while w < limit {
        let next_w = w + step;
        let r = response(next_w);
        if r <= target {
            lo = w;
            hi = Some(next_w);
            break;
        }
        if r > prev {
            // Past the minimum: truncation now dominates.
            break;
        }
        best = best.min(r);
        prev = r;
        w = next_w;
    }
    let mut hi = hi.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "MTF {target} unattainable with a {0}x{0} Gaussian kernel; achievable range is ({1:.4}, 1)",
            spec.kernel_size, best
        ))
    })?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if response(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let taps = gaussian_taps(0.5 * (lo + hi), radius);
    Kernel::separable(&taps, &taps)?.normalized()
}

/// Separable Hann-windowed sinc low-pass with cutoff at the Nyquist frequency of a
/// grid decimated by `factor`.
pub fn antialias_kernel(factor: usize) -> Result<Kernel> {
    if factor == 0 {
        return Err(Error::InvalidParameter("decimation factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(Kernel::identity());
    }
    let f = factor as f64;
    let radius = 4 * factor;
    let n = 2 * radius + 1;
    let taps: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - radius as f64;
            let sinc = if d == 0.0 {
                1.0
            } else {
                let t = std::f64::consts::PI * d / f;
                t.sin() / t
            };
            let window =
                0.5 + 0.5 * (std::f64::consts::PI * d / (radius as f64 + 1.0)).cos();
            sinc * window
        })
        .collect();
    let s: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / s).collect();
    Kernel::separable(&taps, &taps)
}

fn decimate(x: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    if x.height() % factor != 0 || x.width() % factor != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} raster not divisible by {}",
            x.height(),
            x.width(),
            factor
        )));
    }
    Ok(ImageGrid::from_fn(x.height() / factor, x.width() / factor, |r, c| {
        x.get(r * factor, c * factor)
    }))
}

/// Anti-alias filter then decimate by `factor`.
pub fn antialias_downsample(x: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let k = antialias_kernel(factor)?;
    if k.height() > x.height() || k.width() > x.width() {
        return Err(Error::Dimension(format!(
            "{}x{} raster too small for a x{} anti-alias filter",
            x.height(),
            x.width(),
            factor
        )));
    }
    decimate(&convolve_circular(x, &k)?, factor)
}

/// Target and degraded images from a clean high-resolution raster.
///
/// The target is the clean image anti-aliased and decimated by `target_scale`;
/// the degraded image is [`degrade`] applied to the target.
pub fn simulate_pair(
    clean_hi_res: &ImageGrid,
    fm: &ForwardModel,
    target_scale: usize,
    rng: &mut Rng,
) -> Result<(ImageGrid, ImageGrid)> {
    let target = antialias_downsample(clean_hi_res, target_scale)?;
    fm.measurement_shape(target.shape())?;
    let degraded = degrade(&target, fm, rng)?;
    Ok((target, degraded))
}

/// On-disk form of a [`ForwardModel`]. `kernel_file` is resolved relative to the
/// JSON document's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardModelDoc {
    pub kernel_file: String,
    pub scale: usize,
    pub sigma0: f64,
    pub k_gain: f64,
    #[serde(default)]
    pub quantize: bool,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub variance_gradient: bool,
}

fn default_true() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

pub fn load_forward_model(path: impl AsRef<Path>) -> Result<ForwardModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ForwardModelDoc = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    let kernel_path = resolve_relative(path, &doc.kernel_file);
    let kernel = io::read_kernel(&kernel_path)?;
    let fm = ForwardModel {
        kernel,
        scale: doc.scale,
        sigma0: doc.sigma0,
        k_gain: doc.k_gain,
        quantize: doc.quantize,
        variance_gradient: doc.variance_gradient,
    };
    fm.validate()?;
    Ok(fm)
}

/// Writes the JSON document and its kernel file (`kernel_file`, relative to the
/// document).
pub fn save_forward_model(
    path: impl AsRef<Path>,
    fm: &ForwardModel,
    kernel_file: &str,
) -> Result<()> {
    let path = path.as_ref();
    io::write_kernel(resolve_relative(path, kernel_file), &fm.kernel)?;
    let doc = ForwardModelDoc {
        kernel_file: kernel_file.to_string(),
        scale: fm.scale,
        sigma0: fm.sigma0,
        k_gain: fm.k_gain,
        quantize: fm.quantize,
        variance_gradient: fm.variance_gradient,
    };
    let text = serde_json::to_string_pretty(&doc).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn resolve_relative(doc_path: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        doc_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(rng: &mut Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, |_, _| 0.2 + 0.6 * rng.uniform())
    }

    fn blur3() -> Kernel {
        Kernel::new(3, 3, vec![0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05]).unwrap()
    }

    #[test]
    fn noiseless_identity_degrade_is_exact() {
        let mut rng = Rng::new(1);
        let x = random_image(&mut rng, 6, 6);
        let fm = ForwardModel::new(Kernel::identity(), 1, 1e-300, 0.0).unwrap();
        let y = degrade(&x, &fm, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn invalid_noise_rejected() {
        assert!(ForwardModel::new(Kernel::identity(), 1, 0.0, 0.0).is_err());
        assert!(ForwardModel::new(Kernel::identity(), 1, 0.1, -1.0).is_err());
        assert!(ForwardModel::new(Kernel::identity(), 3, 0.1, 0.0).is_err());
    }

    #[test]
    fn zero_residual_gives_log_det_only() {
        let mut rng = Rng::new(2);
        let x = random_image(&mut rng, 8, 8);
        let fm = ForwardModel::new(blur3(), 2, 0.03, 0.0).unwrap();
        let y = fm.apply(&x).unwrap();
        let v = neg_log_likelihood(&x, &y, &fm).unwrap();
        let expected = 0.5 * 16.0 * (0.03f64 * 0.03).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn fixed_variance_is_least_squares() {
        let mut rng = Rng::new(3);
        let x = random_image(&mut rng, 8, 8);
        let y = random_image(&mut rng, 8, 8);
        let fm = ForwardModel::new(blur3(), 1, 0.05, 0.0).unwrap();
        let r = fm.apply(&x).unwrap().zip_map(&y, |a, b| a - b).unwrap();
        let expected = r.norm_sq() / (2.0 * 0.0025) + 0.5 * 64.0 * 0.0025f64.ln();
        let v = neg_log_likelihood(&x, &y, &fm).unwrap();
        assert!((v - expected).abs() < 1e-9 * expected.abs());

        let g = grad_neg_log_likelihood(&x, &y, &fm).unwrap();
        let g_ls = fm.apply_adjoint(&r).unwrap().map(|v| v / 0.0025);
        for (a, b) in g.data().iter().zip(g_ls.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_per_pixel_summation() {
        let mut rng = Rng::new(4);
        let x = random_image(&mut rng, 8, 8);
        let y = random_image(&mut rng, 8, 8);
        let fm = ForwardModel::new(blur3(), 1, 0.02, 0.004).unwrap();
        // Naive: explicit blur loop then explicit sum.
        let mut total = 0.0;
        for i in 0..8isize {
            for j in 0..8isize {
                let mut m = 0.0;
                for a in 0..3isize {
                    for b in 0..3isize {
                        m += fm.kernel.tap(a as usize, b as usize) * x.get_wrapped(i - a + 1, j - b + 1);
                    }
                }
                let v = 0.02 * 0.02 + 0.004 * m;
                let r = y.get(i as usize, j as usize) - m;
                total += 0.5 * r * r / v + 0.5 * v.ln();
            }
        }
        let v = neg_log_likelihood(&x, &y, &fm).unwrap();
        assert!((v - total).abs() < 1e-10 * total.abs().max(1.0));
    }

    #[test]
    fn negative_signal_is_clamped_and_counted() {
        let x = ImageGrid::filled(4, 4, -10.0);
        let y = ImageGrid::zeros(4, 4);
        let fm = ForwardModel::new(Kernel::identity(), 1, 0.01, 0.01).unwrap();
        let e = evaluate_likelihood(&x, &y, &fm, true).unwrap();
        assert_eq!(e.clamped_pixels, 16);
        assert!(e.value.is_finite());
        let g = e.gradient.unwrap();
        // Clamped variance is constant, so only the residual term remains.
        let floor = fm.variance_floor();
        assert!((g.data()[0] + 10.0 / floor).abs() < 1e-6 * 10.0 / floor);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let fm = ForwardModel::new(Kernel::identity(), 2, 0.01, 0.0).unwrap();
        let x = ImageGrid::zeros(8, 8);
        assert!(neg_log_likelihood(&x, &ImageGrid::zeros(8, 8), &fm).is_err());
        assert!(degrade(&ImageGrid::zeros(7, 8), &fm, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn quantized_values_on_grid() {
        let mut rng = Rng::new(5);
        let x = random_image(&mut rng, 16, 16);
        let fm = ForwardModel::new(blur3(), 1, 0.01, 0.001).unwrap().with_quantize(true);
        let (_, y) = simulate_pair(&x, &fm, 1, &mut rng).unwrap();
        for v in y.data() {
            let d = v * 4095.0;
            assert!((d - d.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_identity_pair_matches() {
        let mut rng = Rng::new(6);
        let x = random_image(&mut rng, 8, 8);
        let fm = ForwardModel::new(Kernel::identity(), 1, 1e-300, 0.0).unwrap();
        let (t, d) = simulate_pair(&x, &fm, 1, &mut rng).unwrap();
        assert_eq!(t, d);
    }

    #[test]
    fn psf_hits_target_mtf() {
        for &m in &[0.12, 0.13, 0.15, 0.05, 0.3, 0.5] {
            let h = psf_from_mtf(&MtfSpec {
                mtf_at_nyquist: m,
                kernel_size: 9,
            })
            .unwrap();
            assert!(h.is_normalized());
            assert!(h.taps().iter().all(|&t| t >= 0.0));
            let (mx, my) = measure_mtf(&h);
            assert!((mx - m).abs() < 1e-3, "{m}: {mx}");
            assert!((my - m).abs() < 1e-3);
        }
    }

    #[test]
    fn psf_rejects_bad_targets() {
        assert!(psf_from_mtf(&MtfSpec { mtf_at_nyquist: 0.0, kernel_size: 9 }).is_err());
        assert!(psf_from_mtf(&MtfSpec { mtf_at_nyquist: 1.0, kernel_size: 9 }).is_err());
        assert!(psf_from_mtf(&MtfSpec { mtf_at_nyquist: 0.2, kernel_size: 8 }).is_err());
        // Even a 3x3 support reaches a zero response (taps 1/4, 1/2, 1/4).
        let h = psf_from_mtf(&MtfSpec { mtf_at_nyquist: 1e-4, kernel_size: 3 }).unwrap();
        assert!((measure_mtf(&h).0 - 1e-4).abs() < 1e-6);
    }

    #[test]
    fn antialias_kernel_is_lowpass() {
        let k = antialias_kernel(2).unwrap();
        assert!(k.is_normalized());
        let (mx, _) = measure_mtf(&k);
        assert!(mx < 0.02);
    }

    #[test]
    fn forward_model_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fm = ForwardModel::new(blur3(), 2, 0.01, 0.002).unwrap().with_quantize(true);
        let p = dir.path().join("fm.json");
        save_forward_model(&p, &fm, "kernel.f32r").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["kernel_file", "scale", "sigma0", "k_gain", "quantize"] {
            assert!(doc.get(key).is_some(), "{key}");
        }
        let back = load_forward_model(&p).unwrap();
        assert_eq!(back.scale, 2);
        assert_eq!(back.sigma0, 0.01);
        assert!(back.quantize);
        for (a, b) in back.kernel.taps().iter().zip(fm.kernel.taps()) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
