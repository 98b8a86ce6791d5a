//! Soft thresholding of overlapping block-DCT coefficients.

use crate::image::ImageGrid;

/// Orthonormal DCT-II matrix, `m[k][n]`.
pub(crate) fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] =
                scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

/// `out = m · b · mᵀ` for square `n`x`n` blocks (or the transpose when `inverse`).
pub(crate) fn transform_block(m: &[f64], n: usize, b: &[f64], out: &mut [f64], inverse: bool) {
    let mut tmp = vec![0.0; n * n];
    // tmp = M b  (or Mᵀ b)
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let mik = if inverse { m[k * n + i] } else { m[i * n + k] };
                acc += mik * b[k * n + j];
            }
            tmp[i * n + j] = acc;
        }
    }
    // out = tmp Mᵀ  (or tmp M)
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let mjk = if inverse { m[k * n + j] } else { m[j * n + k] };
                acc += tmp[i * n + k] * mjk;
            }
            out[i * n + j] = acc;
        }
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub(crate) fn dct_shrink(x: &ImageGrid, block: usize, stride: usize, threshold: f64) -> ImageGrid {
    let (h, w) = x.shape();
    let n = block.min(h).min(w).max(1);
    let stride = stride.clamp(1, n);
    let m = dct_matrix(n);
    let mut acc = vec![0.0; h * w];
    let mut count = vec![0.0; h * w];
    let mut b = vec![0.0; n * n];
    let mut coef = vec![0.0; n * n];
    // Block origins on a periodic lattice; blocks wrap around the borders.
    for r0 in (0..h).step_by(stride) {
        for c0 in (0..w).step_by(stride) {
            for i in 0..n {
                for j in 0..n {
                    b[i * n + j] = x.get((r0 + i) % h, (c0 + j) % w);
                }
            }
            transform_block(&m, n, &b, &mut coef, false);
            for v in coef.iter_mut().skip(1) {
                *v = soft(*v, threshold);
            }
            transform_block(&m, n, &coef, &mut b, true);
            for i in 0..n {
                for j in 0..n {
                    let idx = ((r0 + i) % h) * w + (c0 + j) % w;
                    acc[idx] += b[i * n + j];
                    count[idx] += 1.0;
                }
            }
        }
    }
    let data = acc.iter().zip(&count).map(|(a, c)| a / c).collect();
    ImageGrid::from_vec_unchecked(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_matrix_is_orthonormal() {
        let n = 8;
        let m = dct_matrix(n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| m[a * n + i] * m[b * n + i]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_transform_round_trip() {
        let n = 8;
        let m = dct_matrix(n);
        let b: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut c = vec![0.0; 64];
        let mut back = vec![0.0; 64];
        transform_block(&m, n, &b, &mut c, false);
        transform_block(&m, n, &c, &mut back, true);
        for (x, y) in b.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
