//! 2D discrete Fourier transforms of real rasters.
//!
//! Unnormalized forward transform, `1/N` on the inverse. Plans are cached per thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::image::{ImageGrid, Kernel};

/// Full complex spectrum of an `height`x`width` raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut guard = p.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

fn transform_2d(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    if height == 0 || width == 0 {
        return;
    }
    let row_fft = plan(width, inverse);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = plan(height, inverse);
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

pub fn fft2_real(x: &ImageGrid) -> Spectrum {
    let mut data: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut data, x.height(), x.width(), false);
    Spectrum {
        height: x.height(),
        width: x.width(),
        data,
    }
}

/// In-place complex forward/inverse transforms, used by the proximal solvers.
pub fn fft2_complex(data: &mut [Complex64], height: usize, width: usize) {
    transform_2d(data, height, width, false);
}

pub fn ifft2_complex(data: &mut [Complex64], height: usize, width: usize) {
    transform_2d(data, height, width, true);
    let n = (height * width) as f64;
    for v in data.iter_mut() {
        *v /= n;
    }
}

/// Inverse transform, keeping the real part.
pub fn ifft2_real(spectrum: &Spectrum) -> ImageGrid {
    let mut data = spectrum.data.clone();
    ifft2_complex(&mut data, spectrum.height, spectrum.width);
    ImageGrid::from_vec_unchecked(
        spectrum.height,
        spectrum.width,
        data.into_iter().map(|c| c.re).collect(),
    )
}

/// Embeds `h` in an `height`x`width` raster with its center tap at the origin,
/// wrapping negative offsets. Its spectrum is the transfer function of
/// periodic convolution with `h`.
pub fn kernel_to_image(h: &Kernel, height: usize, width: usize) -> Result<ImageGrid> {
    if h.height() > height || h.width() > width {
        return Err(crate::Error::Dimension(format!(
            "kernel {}x{} larger than grid {}x{}",
            h.height(),
            h.width(),
            height,
            width
        )));
    }
    let (ch, cw) = (h.height() / 2, h.width() / 2);
    let mut img = ImageGrid::zeros(height, width);
    for a in 0..h.height() {
        for b in 0..h.width() {
            let r = (a + height - ch) % height;
            let c = (b + width - cw) % width;
            let v = img.get(r, c) + h.tap(a, b);
            img.set(r, c, v);
        }
    }
    Ok(img)
}

pub fn transfer_function(h: &Kernel, height: usize, width: usize) -> Result<Spectrum> {
    Ok(fft2_real(&kernel_to_image(h, height, width)?))
}
