//! Synthetic urban-like scenes and the toy restoration problems built on them.

use crate::error::Result;
use crate::forward::{degrade, psf_from_mtf, ForwardModel, MtfSpec};
use crate::image::ImageGrid;
use crate::rng::Rng;

/// Piecewise-smooth scene: a shaded background, roads, rectangular roofs with
/// a lit and a shadowed side, round canopies, and faint texture. Values stay
/// within `[0.02, 0.95]`.
pub fn toy_scene(height: usize, width: usize, rng: &mut Rng) -> ImageGrid {
    let (hf, wf) = (height as f64, width as f64);
    let base = 0.25 + 0.2 * rng.uniform();
    let (gx, gy) = (0.1 * rng.centered_uniform(), 0.1 * rng.centered_uniform());
    let mut img = ImageGrid::from_fn(height, width, |r, c| {
        base + gx * c as f64 / wf + gy * r as f64 / hf
    });

    let roads = 1 + (rng.uniform() * 2.0) as usize;
    for _ in 0..roads {
        let vertical = rng.uniform() < 0.5;
        let pos = rng.uniform() * if vertical { wf } else { hf };
        let half = 1.0 + 2.0 * rng.uniform();
        let level = 0.5 + 0.2 * rng.uniform();
        for r in 0..height {
            for c in 0..width {
                let d = if vertical { c as f64 - pos } else { r as f64 - pos };
                if d.abs() <= half {
                    img.set(r, c, level);
                }
            }
        }
    }

    let buildings = 3 + (rng.uniform() * 5.0) as usize;
    for _ in 0..buildings {
        let bh = 4.0 + rng.uniform() * hf / 4.0;
        let bw = 4.0 + rng.uniform() * wf / 4.0;
        let r0 = rng.uniform() * (hf - bh);
        let c0 = rng.uniform() * (wf - bw);
        let roof = 0.3 + 0.6 * rng.uniform();
        let tilt = 0.15 * rng.centered_uniform();
        let shadow = rng.uniform() < 0.5;
        for r in 0..height {
            for c in 0..width {
                let (y, x) = (r as f64 - r0, c as f64 - c0);
                if y >= 0.0 && y < bh && x >= 0.0 && x < bw {
                    let side = if x < bw / 2.0 { tilt } else { -tilt };
                    img.set(r, c, roof + side);
                } else if shadow && y >= bh && y < bh + 3.0 && x >= 1.0 && x < bw + 1.0 {
                    let v = img.get(r, c);
                    img.set(r, c, 0.4 * v);
                }
            }
        }
    }

    let trees = (rng.uniform() * 8.0) as usize;
    for _ in 0..trees {
        let (cr, cc) = (rng.uniform() * hf, rng.uniform() * wf);
        let rad = 1.5 + 3.0 * rng.uniform();
        let level = 0.1 + 0.1 * rng.uniform();
        for r in 0..height {
            for c in 0..width {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                if d2 <= rad * rad {
                    let shade = 1.0 - 0.3 * (d2 / (rad * rad));
                    img.set(r, c, level * shade + 0.05);
                }
            }
        }
    }

    img.map(|v| (v + 0.01 * rng.gaussian()).clamp(0.02, 0.95))
}

#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub truth: ImageGrid,
    pub measurement: ImageGrid,
    pub model: ForwardModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySuiteConfig {
    pub size: usize,
    pub scale: usize,
    pub mtf_at_nyquist: f64,
    pub kernel_size: usize,
    pub sigma0: f64,
    pub k_gain: f64,
}

impl Default for ToySuiteConfig {
    fn default() -> Self {
        Self {
            size: 64,
            scale: 1,
            mtf_at_nyquist: 0.15,
            kernel_size: 9,
            sigma0: 0.01,
            k_gain: 1e-4,
        }
    }
}

/// `count` independent problems; problem `i` draws from substream `i` of `seed`.
pub fn toy_suite(cfg: &ToySuiteConfig, count: usize, seed: u64) -> Result<Vec<ToyProblem>> {
    let kernel = psf_from_mtf(&MtfSpec {
        mtf_at_nyquist: cfg.mtf_at_nyquist,
        kernel_size: cfg.kernel_size,
    })?;
    let model = ForwardModel::new(kernel, cfg.scale, cfg.sigma0, cfg.k_gain)?;
    let root = Rng::new(seed);
    (0..count)
        .map(|i| {
            let mut rng = root.substream(i as u64);
            let truth = toy_scene(cfg.size, cfg.size, &mut rng);
            let measurement = degrade(&truth, &model, &mut rng)?;
            Ok(ToyProblem {
                truth,
                measurement,
                model: model.clone(),
            })
        })
        .collect()
}
