//! Raster file formats.
//!
//! `F32R`: the 4 magic bytes `F32R`, little-endian `u32` height and width, then
//! `height * width` little-endian `f32` values in row-major order.
//!
//! PNG (16-bit grayscale) and binary PGM hold 12-bit digital counts: a count `d`
//! reads as `min(d, 4095) / 4095`, and a value `x` writes as `round(x * 4095)`
//! clamped to `[0, 4095]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageGrid, Kernel};

pub const F32R_MAGIC: &[u8; 4] = b"F32R";
pub const FULL_SCALE: f64 = 4095.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    F32r,
    Png,
    Pgm,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("f32r") | Some("f32") | Some("raw") => Ok(Self::F32r),
            Some("png") => Ok(Self::Png),
            Some("pgm") => Ok(Self::Pgm),
            _ => Err(Error::format(path, "unrecognized raster extension")),
        }
    }
}

pub fn encode_f32r(img: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * img.len());
    out.extend_from_slice(F32R_MAGIC);
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32r(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    if bytes.len() < 12 || &bytes[..4] != F32R_MAGIC {
        return Err(Error::format(path, "missing F32R magic"));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * height * width;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "F32R payload is {} bytes, header {}x{} needs {}",
                bytes.len(),
                height,
                width,
                expected
            ),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageGrid::new(height, width, data).map_err(|e| Error::format(path, e.to_string()))
}

fn to_count(v: f64) -> u16 {
    (v * FULL_SCALE).round().clamp(0.0, FULL_SCALE) as u16
}

fn from_count(d: u16) -> f64 {
    f64::from(d.min(4095)) / FULL_SCALE
}

fn encode_pgm(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n4095\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        out.extend_from_slice(&to_count(v).to_be_bytes());
    }
    out
}

fn decode_pgm(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    // Header: magic, width, height, maxval, separated by whitespace; '#' comments.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace before the raster
    if fields[0] != "P5" {
        return Err(Error::format(path, format!("unsupported PNM type {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    let n = width * height;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    let data: Vec<f64> = if maxval < 256 {
        if raster.len() < n {
            return Err(Error::format(path, "truncated PGM raster"));
        }
        raster[..n].iter().map(|&d| from_count(d as u16)).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(Error::format(path, "truncated PGM raster"));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| from_count(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    ImageGrid::new(height, width, data).map_err(|e| Error::format(path, e.to_string()))
}

fn encode_png(img: &ImageGrid, path: &Path) -> Result<Vec<u8>> {
    let counts: Vec<u16> = img.data().iter().map(|&v| to_count(v)).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        img.width() as u32,
        img.height() as u32,
        counts,
    )
    .ok_or_else(|| Error::format(path, "raster size overflow"))?;
    let mut out = std::io::Cursor::new(Vec::new());
    image::DynamicImage::ImageLuma16(buf)
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(out.into_inner())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(from_count).collect();
    ImageGrid::new(h as usize, w as usize, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_raster(img: &ImageGrid, format: RasterFormat, path: &Path) -> Result<Vec<u8>> {
    match format {
        RasterFormat::F32r => Ok(encode_f32r(img)),
        RasterFormat::Pgm => Ok(encode_pgm(img)),
        RasterFormat::Png => encode_png(img, path),
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let format = RasterFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        RasterFormat::F32r => decode_f32r(&bytes, path),
        RasterFormat::Pgm => decode_pgm(&bytes, path),
        RasterFormat::Png => decode_png(&bytes, path),
    }
}

pub fn write_raster(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_raster(img, RasterFormat::from_path(path)?, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Kernels are stored as F32R rasters with odd dimensions.
pub fn read_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_f32r(&bytes, path)?;
    Kernel::new(img.height(), img.width(), img.into_vec())
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_kernel(path: impl AsRef<Path>, h: &Kernel) -> Result<()> {
    let path = path.as_ref();
    let img = ImageGrid::new(h.height(), h.width(), h.taps().to_vec())?;
    fs::write(path, encode_f32r(&img)).map_err(|e| Error::io(path, e))
}
