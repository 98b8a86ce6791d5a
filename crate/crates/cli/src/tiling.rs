//! Overlapping tile layout and raised-cosine blending.

use std::f64::consts::PI;

use satrestore::ImageGrid;

use crate::error::{CliError, CliResult};

/// Tile origins along one axis. All values are in target pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisPlan {
    pub len: usize,
    pub tile: usize,
    pub starts: Vec<usize>,
}

impl AxisPlan {
    /// Stride `tile - overlap`; the last tile is pulled back to end flush with
    /// the image. A tile at least as long as the axis gives one full-length tile.
    pub fn new(len: usize, tile: usize, overlap: usize, scale: usize) -> CliResult<Self> {
        if tile >= len {
            return Ok(Self {
                len,
                tile: len,
                starts: vec![0],
            });
        }
        if overlap >= tile {
            return Err(CliError::config(format!(
                "overlap {overlap} must be smaller than the tile size {tile}"
            )));
        }
        if tile % scale != 0 || overlap % scale != 0 || len % scale != 0 {
            return Err(CliError::config(format!(
                "tile {tile}, overlap {overlap} and image size {len} must be multiples of the scale {scale}"
            )));
        }
        let stride = tile - overlap;
        let mut starts = vec![0];
        while starts.last().unwrap() + tile < len {
            let next = (starts.last().unwrap() + stride).min(len - tile);
            starts.push(next);
        }
        Ok(Self { len, tile, starts })
    }

    /// Blend weights for tile `i`: a raised-cosine ramp across each overlap
    /// with a neighbour, 1 elsewhere. Ramps never reach zero, so the weight
    /// sum is positive everywhere.
    pub fn weights(&self, i: usize) -> Vec<f64> {
        let start = self.starts[i];
        let mut w = vec![1.0; self.tile];
        if i > 0 {
            let ov = self.starts[i - 1] + self.tile - start;
            for (k, wk) in w.iter_mut().take(ov).enumerate() {
                *wk *= 0.5 - 0.5 * (PI * (k as f64 + 0.5) / ov as f64).cos();
            }
        }
        if i + 1 < self.starts.len() {
            let ov = start + self.tile - self.starts[i + 1];
            for k in 0..ov {
                w[self.tile - ov + k] *= 0.5 + 0.5 * (PI * (k as f64 + 0.5) / ov as f64).cos();
            }
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub rows: AxisPlan,
    pub cols: AxisPlan,
    pub scale: usize,
    /// Context restored around each tile and discarded afterwards, in target
    /// pixels. Zero when there is a single tile.
    pub halo: usize,
}

/// One tile in target pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl TilePlan {
    pub fn new(
        target: (usize, usize),
        tile: Option<usize>,
        overlap: usize,
        halo: usize,
        scale: usize,
    ) -> CliResult<Self> {
        let (h, w) = target;
        let tile = tile.unwrap_or(usize::MAX);
        if halo % scale != 0 {
            return Err(CliError::config(format!(
                "halo {halo} must be a multiple of the scale {scale}"
            )));
        }
        let mut plan = Self {
            rows: AxisPlan::new(h, tile, overlap, scale)?,
            cols: AxisPlan::new(w, tile, overlap, scale)?,
            scale,
            halo,
        };
        if plan.len() == 1 {
            plan.halo = 0;
        }
        Ok(plan)
    }

    /// Target-grid size of the window restored for each tile.
    pub fn window_shape(&self) -> (usize, usize) {
        (self.rows.tile + 2 * self.halo, self.cols.tile + 2 * self.halo)
    }

    pub fn len(&self) -> usize {
        self.rows.starts.len() * self.cols.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tiles(&self) -> Vec<Tile> {
        let nc = self.cols.starts.len();
        let mut out = Vec::with_capacity(self.len());
        for (i, &row) in self.rows.starts.iter().enumerate() {
            for (j, &col) in self.cols.starts.iter().enumerate() {
                out.push(Tile {
                    index: i * nc + j,
                    row,
                    col,
                    height: self.rows.tile,
                    width: self.cols.tile,
                });
            }
        }
        out
    }

    /// The measurement pixels covering `tile` plus the halo. The halo wraps
    /// around the image edges, matching the periodic boundary the solvers
    /// assume for a whole image, so tiles see no artificial seam.
    pub fn measurement_window(&self, y: &ImageGrid, tile: &Tile) -> ImageGrid {
        let s = self.scale;
        let (wh, ww) = self.window_shape();
        let r0 = (tile.row / s) as isize - (self.halo / s) as isize;
        let c0 = (tile.col / s) as isize - (self.halo / s) as isize;
        ImageGrid::from_fn(wh / s, ww / s, |r, c| {
            y.get_wrapped(r0 + r as isize, c0 + c as isize)
        })
    }

    /// The tile itself out of a restored window.
    pub fn trim(&self, window: &ImageGrid, tile: &Tile) -> CliResult<ImageGrid> {
        if self.halo == 0 {
            return Ok(window.clone());
        }
        Ok(window.crop(self.halo, self.halo, tile.height, tile.width)?)
    }

    /// Weighted average of per-tile results, in tile order. A single tile is
    /// returned unchanged.
    pub fn blend(&self, parts: &[ImageGrid]) -> CliResult<ImageGrid> {
        if parts.len() != self.len() {
            return Err(CliError::data(format!(
                "expected {} tile results, got {}",
                self.len(),
                parts.len()
            )));
        }
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        let (h, w) = (self.rows.len, self.cols.len);
        let mut acc = ImageGrid::zeros(h, w);
        let mut wsum = ImageGrid::zeros(h, w);
        let nc = self.cols.starts.len();
        for (t, part) in self.tiles().iter().zip(parts) {
            if part.shape() != (t.height, t.width) {
                return Err(CliError::data(format!(
                    "tile {} result is {:?}, expected {:?}",
                    t.index,
                    part.shape(),
                    (t.height, t.width)
                )));
            }
            let wr = self.rows.weights(t.index / nc);
            let wc = self.cols.weights(t.index % nc);
            for r in 0..t.height {
                for c in 0..t.width {
                    let wt = wr[r] * wc[c];
                    let (gr, gc) = (t.row + r, t.col + c);
                    acc.set(gr, gc, acc.get(gr, gc) + wt * part.get(r, c));
                    wsum.set(gr, gc, wsum.get(gr, gc) + wt);
                }
            }
        }
        Ok(acc.zip_map(&wsum, |a, s| a / s)?)
    }
}
