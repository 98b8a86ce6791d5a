//! Chambolle's dual projection for the isotropic TV proximal problem
//! `argmin_u ||u - f||² / 2 + weight * TV(u)`.

use crate::image::ImageGrid;

// Forward differences, zero across the last row/column (Neumann boundary).
fn gradient(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            gx[i] = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            gy[i] = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
        }
    }
}

// Negative adjoint of `gradient`.
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let dx = if c == 0 {
                px[i]
            } else if c + 1 == w {
                -px[i - 1]
            } else {
                px[i] - px[i - 1]
            };
            let dy = if r == 0 {
                py[i]
            } else if r + 1 == h {
                -py[i - w]
            } else {
                py[i] - py[i - w]
            };
            out[i] = dx + dy;
        }
    }
}

pub(crate) fn tv_prox(f: &ImageGrid, weight: f64, iterations: usize, step: f64) -> ImageGrid {
    if weight <= 0.0 {
        return f.clone();
    }
    let (h, w) = f.shape();
    let n = h * w;
    let fd = f.data();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let inv_w = 1.0 / weight;
    for _ in 0..iterations {
        divergence(&px, &py, h, w, &mut div);
        for i in 0..n {
            v[i] = div[i] - fd[i] * inv_w;
        }
        gradient(&v, h, w, &mut gx, &mut gy);
        for i in 0..n {
            let norm = (gx[i] * gx[i] + gy[i] * gy[i]).sqrt();
            let denom = 1.0 + step * norm;
            px[i] = (px[i] + step * gx[i]) / denom;
            py[i] = (py[i] + step * gy[i]) / denom;
        }
    }
    divergence(&px, &py, h, w, &mut div);
    let data = fd.iter().zip(&div).map(|(f, d)| f - weight * d).collect();
    ImageGrid::from_vec_unchecked(h, w, data)
}

/// Isotropic total variation with forward differences.
pub fn total_variation(u: &ImageGrid) -> f64 {
    let (h, w) = u.shape();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    gradient(u.data(), h, w, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}
