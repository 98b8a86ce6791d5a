//! Error-bound calibration, coverage (ICP) evaluation, PSNR and SSIM.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_MIN_OCCUPANCY: usize = 50;

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let pos = alpha.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Smallest value with at least a fraction `alpha` of the sample at or below it.
fn upper_quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Per-pixel `alpha`-quantile of `|sample - center|` over the samples.
pub fn deviation_quantile(
    samples: &[ImageGrid],
    center: &ImageGrid,
    alpha: f64,
) -> Result<ImageGrid> {
    deviation_quantiles(samples, center, &[alpha]).map(|mut v| v.remove(0))
}

/// [`deviation_quantile`] for several levels, sorting each pixel once.
pub fn deviation_quantiles(
    samples: &[ImageGrid],
    center: &ImageGrid,
    alphas: &[f64],
) -> Result<Vec<ImageGrid>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no posterior samples".into()));
    }
    for s in samples {
        s.ensure_same_shape(center)?;
    }
    let (h, w) = center.shape();
    let mut out = vec![vec![0.0; h * w]; alphas.len()];
    let mut buf = vec![0.0; samples.len()];
    for i in 0..h * w {
        let c = center.data()[i];
        for (b, s) in buf.iter_mut().zip(samples) {
            *b = (s.data()[i] - c).abs();
        }
        buf.sort_by(f64::total_cmp);
        for (o, &a) in out.iter_mut().zip(alphas) {
            o[i] = quantile_sorted(&buf, a);
        }
    }
    out.into_iter().map(|d| ImageGrid::new(h, w, d)).collect()
}

/// Per-pixel sample standard deviation (denominator `n - 1`, zero for one sample).
pub fn sample_std(samples: &[ImageGrid]) -> Result<ImageGrid> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("no posterior samples".into()))?;
    let n = samples.len() as f64;
    let mut mean = ImageGrid::zeros(first.height(), first.width());
    for s in samples {
        s.ensure_same_shape(first)?;
        mean.axpy(1.0 / n, s);
    }
    if samples.len() < 2 {
        return Ok(ImageGrid::zeros(first.height(), first.width()));
    }
    let mut var = ImageGrid::zeros(first.height(), first.width());
    for s in samples {
        for ((v, a), m) in var.data_mut().iter_mut().zip(s.data()).zip(mean.data()) {
            *v += (a - m) * (a - m);
        }
    }
    Ok(var.map(|v| (v / (n - 1.0)).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub alpha: f64,
    pub bin_edges: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub counts: Vec<usize>,
    pub min_occupancy: usize,
}

impl CalibrationTable {
    pub fn n_bins(&self) -> usize {
        self.quantiles.len()
    }

    /// Bin holding `deviation`; values outside the edges go to the end bins.
    pub fn bin_of(&self, deviation: f64) -> usize {
        let interior = &self.bin_edges[1..self.bin_edges.len() - 1];
        interior.partition_point(|&e| e <= deviation)
    }

    pub fn lookup(&self, deviation: f64) -> f64 {
        self.quantiles[self.bin_of(deviation)]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        table.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.quantiles.len();
        if b == 0 || self.bin_edges.len() != b + 1 || self.counts.len() != b {
            return Err(Error::InvalidParameter(format!(
                "calibration table has {} edges, {} quantiles and {} counts",
                self.bin_edges.len(),
                b,
                self.counts.len()
            )));
        }
        if self.bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "calibration bin edges must be strictly increasing".into(),
            ));
        }
        if self.quantiles.iter().any(|q| !q.is_finite()) {
            return Err(Error::InvalidParameter(
                "calibration quantiles must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Weighted pool-adjacent-violators: nondecreasing least-squares fit.
fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v2, w2, n2) = blocks[blocks.len() - 1];
            let (v1, w1, n1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.pop();
            let wt = w1 + w2;
            let merged = if wt > 0.0 { (v1 * w1 + v2 * w2) / wt } else { 0.5 * (v1 + v2) };
            *blocks.last_mut().unwrap() = (merged, wt, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, n)| std::iter::repeat(v).take(n))
        .collect()
}

/// Fit per-bin `alpha`-quantiles of `|true_error|` conditioned on the predicted
/// deviation. Bins hold roughly equal numbers of pixels.
pub fn calibrate(
    pairs: &[(ImageGrid, ImageGrid)],
    alpha: f64,
    n_bins: usize,
) -> Result<CalibrationTable> {
    calibrate_with(pairs, alpha, n_bins, DEFAULT_MIN_OCCUPANCY)
}

pub fn calibrate_with(
    pairs: &[(ImageGrid, ImageGrid)],
    alpha: f64,
    n_bins: usize,
    min_occupancy: usize,
) -> Result<CalibrationTable> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("calibration needs at least one pair".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter("n_bins must be positive".into()));
    }
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (pred, err) in pairs {
        pred.ensure_same_shape(err)?;
        points.extend(pred.data().iter().zip(err.data()).map(|(&p, &e)| (p, e.abs())));
    }
    if points.is_empty() {
        return Err(Error::InvalidParameter("calibration pairs are empty".into()));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = points.len();

    let lo = points[0].0;
    let hi = points[n - 1].0;
    let mut edges = vec![lo];
    for j in 1..n_bins {
        let e = points[j * n / n_bins].0;
        if e > *edges.last().unwrap() && e < hi {
            edges.push(e);
        }
    }
    let top = if hi > lo {
        hi
    } else {
        lo + f64::max(lo.abs() * 1e-12, f64::MIN_POSITIVE)
    };
    edges.push(top);
    let bins = edges.len() - 1;

    let mut table = CalibrationTable {
        alpha,
        bin_edges: edges,
        quantiles: vec![f64::NAN; bins],
        counts: vec![0; bins],
        min_occupancy,
    };
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &(p, e) in &points {
        per_bin[table.bin_of(p)].push(e);
    }
    let mut populated = Vec::new();
    for (j, errs) in per_bin.iter_mut().enumerate() {
        table.counts[j] = errs.len();
        if errs.len() >= min_occupancy && !errs.is_empty() {
            errs.sort_by(f64::total_cmp);
            table.quantiles[j] = upper_quantile_sorted(errs, alpha);
            populated.push(j);
        }
    }
    if populated.is_empty() {
        let mut all: Vec<f64> = points.iter().map(|p| p.1).collect();
        all.sort_by(f64::total_cmp);
        let q = upper_quantile_sorted(&all, alpha);
        table.quantiles.iter_mut().for_each(|v| *v = q);
    } else {
        for j in 0..bins {
            if table.quantiles[j].is_nan() {
                let nearest = *populated
                    .iter()
                    .min_by_key(|&&p| (p as isize - j as isize).unsigned_abs())
                    .unwrap();
                table.quantiles[j] = table.quantiles[nearest];
            }
        }
    }
    let weights: Vec<f64> = table.counts.iter().map(|&c| c.max(1) as f64).collect();
    table.quantiles = isotonic(&table.quantiles, &weights);
    Ok(table)
}

/// Calibrated per-pixel error bound.
pub fn apply_calibration(table: &CalibrationTable, predicted_deviation: &ImageGrid) -> ImageGrid {
    predicted_deviation.map(|d| table.lookup(d))
}

/// Fraction of pixels with `|ground_truth - mmse| <= bound`.
pub fn icp(ground_truth: &ImageGrid, mmse: &ImageGrid, bound: &ImageGrid) -> Result<f64> {
    Ok(icp_counts(ground_truth, mmse, bound)?.0 as f64 / ground_truth.len().max(1) as f64)
}

/// `(covered, total)` pixel counts behind [`icp`].
pub fn icp_counts(
    ground_truth: &ImageGrid,
    mmse: &ImageGrid,
    bound: &ImageGrid,
) -> Result<(usize, usize)> {
    ground_truth.ensure_same_shape(mmse)?;
    ground_truth.ensure_same_shape(bound)?;
    let covered = ground_truth
        .data()
        .iter()
        .zip(mmse.data())
        .zip(bound.data())
        .filter(|((g, m), b)| (*g - *m).abs() <= **b)
        .count();
    Ok((covered, ground_truth.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub alpha: f64,
    pub icp: f64,
    /// Binomial standard error `sqrt(icp (1 - icp) / n)`.
    pub stderr: f64,
}

pub fn default_alphas() -> Vec<f64> {
    let mut a: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    a.extend([0.95, 0.99]);
    a
}

/// One restored image with its posterior samples.
#[derive(Debug, Clone, Copy)]
pub struct CoverageInput<'a> {
    pub ground_truth: &'a ImageGrid,
    pub mmse: &'a ImageGrid,
    pub samples: &'a [ImageGrid],
}

/// Uncalibrated coverage: at each level, the bound is the per-pixel quantile of
/// the sample deviations from the MMSE. Counts are pooled across inputs.
pub fn coverage_curve_pooled(inputs: &[CoverageInput<'_>], alphas: &[f64]) -> Result<Vec<CoveragePoint>> {
    let mut covered = vec![0usize; alphas.len()];
    let mut total = 0usize;
    for inp in inputs {
        let bounds = deviation_quantiles(inp.samples, inp.mmse, alphas)?;
        for (c, b) in covered.iter_mut().zip(&bounds) {
            *c += icp_counts(inp.ground_truth, inp.mmse, b)?.0;
        }
        total += inp.ground_truth.len();
    }
    Ok(alphas
        .iter()
        .zip(covered)
        .map(|(&alpha, c)| point(alpha, c, total))
        .collect())
}

pub fn coverage_curve(
    ground_truth: &ImageGrid,
    mmse: &ImageGrid,
    samples: &[ImageGrid],
    alphas: &[f64],
) -> Result<Vec<CoveragePoint>> {
    coverage_curve_pooled(
        &[CoverageInput {
            ground_truth,
            mmse,
            samples,
        }],
        alphas,
    )
}

fn point(alpha: f64, covered: usize, total: usize) -> CoveragePoint {
    let n = total.max(1) as f64;
    let p = covered as f64 / n;
    CoveragePoint {
        alpha,
        icp: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
    }
}

/// Coverage of calibrated bounds, one table per level.
pub fn calibrated_coverage(
    ground_truth: &ImageGrid,
    mmse: &ImageGrid,
    predicted_deviation: &ImageGrid,
    tables: &[CalibrationTable],
) -> Result<Vec<CoveragePoint>> {
    tables
        .iter()
        .map(|t| {
            let bound = apply_calibration(t, predicted_deviation);
            let (c, n) = icp_counts(ground_truth, mmse, &bound)?;
            Ok(point(t.alpha, c, n))
        })
        .collect()
}

pub fn coverage_csv(points: &[CoveragePoint]) -> String {
    let mut s = String::from("alpha,icp,stderr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.alpha, p.icp, p.stderr);
    }
    s
}

/// Coverage curve against the identity line as a standalone SVG document.
pub fn coverage_svg(points: &[CoveragePoint]) -> String {
    let (w, h, m) = (320.0, 320.0, 40.0);
    let px = |a: f64| m + a * (w - 2.0 * m);
    let py = |v: f64| h - m - v * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let pts: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.alpha), py(p.icp)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue"/>"#,
            px(p.alpha),
            py(p.icp)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">alpha</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">ICP</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len().max(1) as f64)
}

pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-12 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable periodic filtering with a centered odd window.
fn filter_wrapped(x: &ImageGrid, g: &[f64]) -> ImageGrid {
    let (h, w) = x.shape();
    let r = (g.len() / 2) as isize;
    let rows = ImageGrid::from_fn(h, w, |i, j| {
        g.iter()
            .enumerate()
            .map(|(k, &t)| t * x.get_wrapped(i as isize, j as isize + k as isize - r))
            .sum()
    });
    ImageGrid::from_fn(h, w, |i, j| {
        g.iter()
            .enumerate()
            .map(|(k, &t)| t * rows.get_wrapped(i as isize + k as isize - r, j as isize))
            .sum()
    })
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5) and
/// periodic local statistics.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Dimension("ssim of empty rasters".into()));
    }
    let g = gaussian_window(11, 1.5);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mu_a = filter_wrapped(a, &g);
    let mu_b = filter_wrapped(b, &g);
    let aa = filter_wrapped(&a.zip_map(a, |x, y| x * y)?, &g);
    let bb = filter_wrapped(&b.zip_map(b, |x, y| x * y)?, &g);
    let ab = filter_wrapped(&a.zip_map(b, |x, y| x * y)?, &g);
    let mut total = 0.0;
    for i in 0..a.len() {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = aa.data()[i] - ma * ma;
        let vb = bb.data()[i] - mb * mb;
        let cov = ab.data()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / a.len() as f64)
}
