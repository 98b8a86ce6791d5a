//! Spatial operators: periodic convolution, decimation and interpolation.

use crate::error::{Error, Result};
use crate::image::{ImageGrid, Kernel};

fn check_kernel_fits(x: &ImageGrid, h: &Kernel) -> Result<()> {
    if h.height() > x.height() || h.width() > x.width() {
        return Err(Error::Dimension(format!(
            "kernel {}x{} larger than image {}x{}",
            h.height(),
            h.width(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// Periodic convolution `h * x`, output the same size as `x`.
pub fn convolve_circular(x: &ImageGrid, h: &Kernel) -> Result<ImageGrid> {
    check_kernel_fits(x, h)?;
    let (rows, cols) = x.shape();
    let (kh, kw) = (h.height(), h.width());
    let (ch, cw) = (kh / 2, kw / 2);
    let src = x.data();
    let mut out = vec![0.0; rows * cols];
    for a in 0..kh {
        for b in 0..kw {
            let t = h.tap(a, b);
            if t == 0.0 {
                continue;
            }
            // out[i, j] += t * x[i - (a - ch), j - (b - cw)]
            let dr = (rows + ch - a) % rows;
            let dc = (cols + cw - b) % cols;
            for i in 0..rows {
                let sr = (i + dr) % rows;
                let src_row = &src[sr * cols..(sr + 1) * cols];
                let dst_row = &mut out[i * cols..(i + 1) * cols];
                let split = cols - dc;
                for (d, s) in dst_row[..split].iter_mut().zip(&src_row[dc..]) {
                    *d += t * s;
                }
                for (d, s) in dst_row[split..].iter_mut().zip(&src_row[..dc]) {
                    *d += t * s;
                }
            }
        }
    }
    Ok(ImageGrid::from_vec_unchecked(rows, cols, out))
}

/// Adjoint of [`convolve_circular`]: periodic correlation with `h`.
pub fn correlate_circular(x: &ImageGrid, h: &Kernel) -> Result<ImageGrid> {
    convolve_circular(x, &h.flipped())
}

fn check_factor(x: &ImageGrid, factor: usize) -> Result<()> {
    if factor != 1 && factor != 2 {
        return Err(Error::InvalidParameter(format!(
            "sampling factor must be 1 or 2, got {factor}"
        )));
    }
    if x.height() % factor != 0 || x.width() % factor != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} raster not divisible by factor {}",
            x.height(),
            x.width(),
            factor
        )));
    }
    Ok(())
}

/// Keep the top-left sample of every `factor`x`factor` block.
pub fn downsample(x: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    check_factor(x, factor)?;
    if factor == 1 {
        return Ok(x.clone());
    }
    let (h, w) = (x.height() / factor, x.width() / factor);
    Ok(ImageGrid::from_fn(h, w, |r, c| x.get(r * factor, c * factor)))
}

/// Adjoint of [`downsample`]: zero-filled upsampling.
pub fn upsample_zero(y: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    if factor != 1 && factor != 2 {
        return Err(Error::InvalidParameter(format!(
            "sampling factor must be 1 or 2, got {factor}"
        )));
    }
    if factor == 1 {
        return Ok(y.clone());
    }
    let mut out = ImageGrid::zeros(y.height() * factor, y.width() * factor);
    for r in 0..y.height() {
        for c in 0..y.width() {
            out.set(r * factor, c * factor, y.get(r, c));
        }
    }
    Ok(out)
}

// Keys cubic convolution kernel with a = -0.5.
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic interpolation by an integer factor with periodic boundaries.
///
/// Output sample `(factor*i, factor*j)` coincides with input sample `(i, j)`, which
/// matches the decimation phase of [`downsample`]: `downsample(bicubic_upsample(y)) == y`.
pub fn bicubic_upsample(y: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    if factor == 0 {
        return Err(Error::InvalidParameter("upsampling factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(y.clone());
    }
    let (h, w) = y.shape();
    // Rows first, then columns (separable).
    let f = factor as f64;
    let mut tmp = ImageGrid::zeros(h, w * factor);
    for r in 0..h {
        for oc in 0..w * factor {
            let pos = oc as f64 / f;
            let base = pos.floor() as isize;
            let frac = pos - base as f64;
            let mut acc = 0.0;
            for k in -1..=2isize {
                acc += cubic_weight(frac - k as f64) * y.get_wrapped(r as isize, base + k);
            }
            tmp.set(r, oc, acc);
        }
    }
    let mut out = ImageGrid::zeros(h * factor, w * factor);
    for or in 0..h * factor {
        let pos = or as f64 / f;
        let base = pos.floor() as isize;
        let frac = pos - base as f64;
        for c in 0..w * factor {
            let mut acc = 0.0;
            for k in -1..=2isize {
                acc += cubic_weight(frac - k as f64) * tmp.get_wrapped(base + k, c as isize);
            }
            out.set(or, c, acc);
        }
    }
    Ok(out)
}

/// Forward operator `D(h * x)`.
pub fn blur_decimate(x: &ImageGrid, h: &Kernel, factor: usize) -> Result<ImageGrid> {
    check_factor(x, factor)?;
    downsample(&convolve_circular(x, h)?, factor)
}

/// Adjoint of [`blur_decimate`]: `hᵀ * Dᵀ(r)`.
pub fn blur_decimate_adjoint(r: &ImageGrid, h: &Kernel, factor: usize) -> Result<ImageGrid> {
    correlate_circular(&upsample_zero(r, factor)?, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(rng: &mut Rng, h: usize, w: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, |_, _| rng.gaussian())
    }

    fn random_kernel(rng: &mut Rng, h: usize, w: usize) -> Kernel {
        Kernel::new(h, w, (0..h * w).map(|_| rng.gaussian()).collect()).unwrap()
    }

    // Literal quadruple loop over output pixels and kernel taps.
    fn naive_convolve(x: &ImageGrid, h: &Kernel) -> ImageGrid {
        let (ch, cw) = (h.height() as isize / 2, h.width() as isize / 2);
        ImageGrid::from_fn(x.height(), x.width(), |i, j| {
            let mut acc = 0.0;
            for a in 0..h.height() {
                for b in 0..h.width() {
                    acc += h.tap(a, b)
                        * x.get_wrapped(i as isize - (a as isize - ch), j as isize - (b as isize - cw));
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_is_noop() {
        let mut rng = Rng::new(3);
        let x = random_image(&mut rng, 7, 5);
        assert_eq!(convolve_circular(&x, &Kernel::identity()).unwrap(), x);
    }

    #[test]
    fn normalized_kernel_preserves_constant() {
        let mut rng = Rng::new(4);
        let h = Kernel::new(3, 5, (0..15).map(|_| rng.uniform()).collect())
            .unwrap()
            .normalized()
            .unwrap();
        let x = ImageGrid::filled(8, 9, 0.37);
        let y = convolve_circular(&x, &h).unwrap();
        for v in y.data() {
            assert!((v - 0.37).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let x = random_image(&mut rng, 8, 8);
            let h = random_kernel(&mut rng, 3, 3);
            let fast = convolve_circular(&x, &h).unwrap();
            let slow = naive_convolve(&x, &h);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let x = random_image(&mut rng, 6, 11);
        let h = random_kernel(&mut rng, 5, 3);
        let fast = convolve_circular(&x, &h).unwrap();
        let slow = naive_convolve(&x, &h);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let x = ImageGrid::zeros(4, 4);
        let h = Kernel::new(5, 1, vec![0.2; 5]).unwrap();
        assert!(matches!(convolve_circular(&x, &h), Err(Error::Dimension(_))));
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Kernel::new(2, 3, vec![0.0; 6]).is_err());
    }

    #[test]
    fn downsample_examples() {
        let x = ImageGrid::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(downsample(&x, 1).unwrap(), x);
        assert_eq!(downsample(&x, 2).unwrap().data(), &[0.0, 2.0, 8.0, 10.0]);
        assert!(downsample(&ImageGrid::zeros(5, 4), 2).is_err());
        assert!(downsample(&x, 3).is_err());
    }

    #[test]
    fn downsample_adjoint_identity() {
        let mut rng = Rng::new(6);
        for _ in 0..10 {
            let x = random_image(&mut rng, 8, 8);
            let y = random_image(&mut rng, 4, 4);
            let lhs = downsample(&x, 2).unwrap().dot(&y);
            let rhs = x.dot(&upsample_zero(&y, 2).unwrap());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_is_convolution_adjoint() {
        let mut rng = Rng::new(7);
        let x = random_image(&mut rng, 10, 12);
        let y = random_image(&mut rng, 10, 12);
        let h = random_kernel(&mut rng, 5, 3);
        let lhs = convolve_circular(&x, &h).unwrap().dot(&y);
        let rhs = x.dot(&correlate_circular(&y, &h).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn bicubic_interpolates_on_grid_and_keeps_constants() {
        let mut rng = Rng::new(8);
        let y = random_image(&mut rng, 6, 5);
        let up = bicubic_upsample(&y, 2).unwrap();
        assert_eq!(up.shape(), (12, 10));
        let back = downsample(&up, 2).unwrap();
        for (a, b) in back.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = bicubic_upsample(&ImageGrid::filled(4, 4, 0.3), 2).unwrap();
        assert!(c.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn convolution_commutes_with_shift() {
        let mut rng = Rng::new(9);
        let x = random_image(&mut rng, 8, 8);
        let h = random_kernel(&mut rng, 3, 3);
        let shift = |img: &ImageGrid| {
            ImageGrid::from_fn(8, 8, |r, c| img.get_wrapped(r as isize - 2, c as isize + 3))
        };
        let a = convolve_circular(&shift(&x), &h).unwrap();
        let b = shift(&convolve_circular(&x, &h).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
