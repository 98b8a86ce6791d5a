//! Forward-only convolutional networks with exact input vector-Jacobian products.
//!
//! The layer vocabulary is deliberately small: `conv2d`, `conv_transpose2d`,
//! `relu`, `leaky_relu` and `add_bias`. Weights are constants; gradients only flow
//! to the network input.
//!
//! Weights live in a JSON manifest plus a little-endian `f32` blob:
//!
//! ```json
//! {
//!   "format": "satrestore-weights-v1",
//!   "blob": "weights.bin",
//!   "sha256": "<hex digest of the blob>",
//!   "networks": {
//!     "denoiser": { "layers": [
//!       { "name": "c0", "kind": "conv2d", "in_channels": 2, "out_channels": 8,
//!         "kernel_size": 3, "stride": 1, "padding": 1, "weight_offset": 0 },
//!       { "name": "b0", "kind": "add_bias", "channels": 8, "weight_offset": 576 },
//!       { "name": "a0", "kind": "leaky_relu", "slope": 0.1 }
//!     ] }
//!   }
//! }
//! ```
//!
//! `weight_offset` is a byte offset into the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "satrestore-weights-v1";

/// Dense `channels x height x width` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "tensor data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        Shape(self.channels, self.height, self.width)
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape(pub usize, pub usize, pub usize);

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0, self.1, self.2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_padding: usize,
    /// `conv2d`: `[out][in][k][k]`; `conv_transpose2d`: `[in][out][k][k]`.
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d(Conv),
    ConvTranspose2d(Conv),
    Relu,
    LeakyRelu { slope: f64 },
    AddBias { bias: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv2d(_) => "conv2d",
            LayerKind::ConvTranspose2d(_) => "conv_transpose2d",
            LayerKind::Relu => "relu",
            LayerKind::LeakyRelu { .. } => "leaky_relu",
            LayerKind::AddBias { .. } => "add_bias",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let Shape(c, h, w) = input;
        let mismatch = |expected: usize| {
            Error::Model(format!(
                "layer '{}' ({}) expects {} input channels, got {}",
                self.name,
                self.kind_name(),
                expected,
                c
            ))
        };
        match &self.kind {
            LayerKind::Conv2d(cv) => {
                if c != cv.in_channels {
                    return Err(mismatch(cv.in_channels));
                }
                let (hp, wp) = (h + 2 * cv.padding, w + 2 * cv.padding);
                if hp < cv.kernel_size || wp < cv.kernel_size {
                    return Err(Error::Model(format!(
                        "layer '{}': input {}x{} smaller than kernel {}",
                        self.name, h, w, cv.kernel_size
                    )));
                }
                Ok(Shape(
                    cv.out_channels,
                    (hp - cv.kernel_size) / cv.stride + 1,
                    (wp - cv.kernel_size) / cv.stride + 1,
                ))
            }
            LayerKind::ConvTranspose2d(cv) => {
                if c != cv.in_channels {
                    return Err(mismatch(cv.in_channels));
                }
                if h == 0 || w == 0 {
                    return Err(Error::Model(format!("layer '{}': empty input", self.name)));
                }
                let full_h = (h - 1) * cv.stride + cv.kernel_size;
                let full_w = (w - 1) * cv.stride + cv.kernel_size;
                if full_h <= 2 * cv.padding || full_w <= 2 * cv.padding {
                    return Err(Error::Model(format!(
                        "layer '{}': padding {} consumes the whole output",
                        self.name, cv.padding
                    )));
                }
                let extra = cv.output_padding;
                Ok(Shape(
                    cv.out_channels,
                    full_h - 2 * cv.padding + extra,
                    full_w - 2 * cv.padding + extra,
                ))
            }
            LayerKind::AddBias { bias } => {
                if c != bias.len() {
                    return Err(mismatch(bias.len()));
                }
                Ok(input)
            }
            LayerKind::Relu | LayerKind::LeakyRelu { .. } => Ok(input),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(x.shape())?;
        let mut out = Tensor::zeros(out_shape.0, out_shape.1, out_shape.2);
        match &self.kind {
            LayerKind::Conv2d(cv) => {
                let k = cv.kernel_size;
                for oc in 0..cv.out_channels {
                    for ic in 0..cv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = cv.weight[((oc * cv.in_channels + ic) * k + ky) * k + kx];
                                for oy in 0..out.height {
                                    let iy = (oy * cv.stride + ky) as isize - cv.padding as isize;
                                    if iy < 0 || iy >= x.height as isize {
                                        continue;
                                    }
                                    for ox in 0..out.width {
                                        let ix = (ox * cv.stride + kx) as isize - cv.padding as isize;
                                        if ix < 0 || ix >= x.width as isize {
                                            continue;
                                        }
                                        let o = out.idx(oc, oy, ox);
                                        out.data[o] += wv * x.data[x.idx(ic, iy as usize, ix as usize)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::ConvTranspose2d(cv) => {
                let k = cv.kernel_size;
                for ic in 0..cv.in_channels {
                    for oc in 0..cv.out_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = cv.weight[((ic * cv.out_channels + oc) * k + ky) * k + kx];
                                for iy in 0..x.height {
                                    let oy = (iy * cv.stride + ky) as isize - cv.padding as isize;
                                    if oy < 0 || oy >= out.height as isize {
                                        continue;
                                    }
                                    for ix in 0..x.width {
                                        let ox = (ix * cv.stride + kx) as isize - cv.padding as isize;
                                        if ox < 0 || ox >= out.width as isize {
                                            continue;
                                        }
                                        let o = out.idx(oc, oy as usize, ox as usize);
                                        out.data[o] += wv * x.data[x.idx(ic, iy, ix)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Relu => {
                for (o, &v) in out.data.iter_mut().zip(&x.data) {
                    *o = v.max(0.0);
                }
            }
            LayerKind::LeakyRelu { slope } => {
                for (o, &v) in out.data.iter_mut().zip(&x.data) {
                    *o = if v >= 0.0 { v } else { slope * v };
                }
            }
            LayerKind::AddBias { bias } => {
                let plane = x.height * x.width;
                for (c, b) in bias.iter().enumerate() {
                    for i in c * plane..(c + 1) * plane {
                        out.data[i] = x.data[i] + b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Jᵀ g` for this layer at input `x`.
    fn vjp(&self, x: &Tensor, g: &Tensor) -> Tensor {
        let mut gin = Tensor::zeros(x.channels, x.height, x.width);
        match &self.kind {
            LayerKind::Conv2d(cv) => {
                let k = cv.kernel_size;
                for oc in 0..cv.out_channels {
                    for ic in 0..cv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = cv.weight[((oc * cv.in_channels + ic) * k + ky) * k + kx];
                                for oy in 0..g.height {
                                    let iy = (oy * cv.stride + ky) as isize - cv.padding as isize;
                                    if iy < 0 || iy >= x.height as isize {
                                        continue;
                                    }
                                    for ox in 0..g.width {
                                        let ix = (ox * cv.stride + kx) as isize - cv.padding as isize;
                                        if ix < 0 || ix >= x.width as isize {
                                            continue;
                                        }
                                        let i = gin.idx(ic, iy as usize, ix as usize);
                                        gin.data[i] += wv * g.data[g.idx(oc, oy, ox)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::ConvTranspose2d(cv) => {
                let k = cv.kernel_size;
                for ic in 0..cv.in_channels {
                    for oc in 0..cv.out_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = cv.weight[((ic * cv.out_channels + oc) * k + ky) * k + kx];
                                for iy in 0..x.height {
                                    let oy = (iy * cv.stride + ky) as isize - cv.padding as isize;
                                    if oy < 0 || oy >= g.height as isize {
                                        continue;
                                    }
                                    for ix in 0..x.width {
                                        let ox = (ix * cv.stride + kx) as isize - cv.padding as isize;
                                        if ox < 0 || ox >= g.width as isize {
                                            continue;
                                        }
                                        let i = gin.idx(ic, iy, ix);
                                        gin.data[i] += wv * g.data[g.idx(oc, oy as usize, ox as usize)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Relu => {
                for ((o, &v), &gv) in gin.data.iter_mut().zip(&x.data).zip(&g.data) {
                    *o = if v > 0.0 { gv } else { 0.0 };
                }
            }
            LayerKind::LeakyRelu { slope } => {
                for ((o, &v), &gv) in gin.data.iter_mut().zip(&x.data).zip(&g.data) {
                    *o = if v >= 0.0 { gv } else { slope * gv };
                }
            }
            LayerKind::AddBias { .. } => gin.data.copy_from_slice(&g.data),
        }
        gin
    }
}

/// Activations recorded by [`Network::forward_with_tape`]; `inputs[i]` is the
/// input of layer `i`.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Shapes after every layer, starting with `input`. Fails on the first layer
    /// whose declared shape does not chain.
    pub fn shape_chain(&self, input: Shape) -> Result<Vec<Shape>> {
        let mut shapes = vec![input];
        let mut cur = input;
        for layer in &self.layers {
            cur = layer.output_shape(cur)?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        Ok(*self.shape_chain(input)?.last().unwrap())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_with_tape(&self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&cur)?;
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, Tape { inputs }))
    }

    /// Vector-Jacobian product w.r.t. the network input recorded in `tape`.
    pub fn vjp(&self, tape: &Tape, cotangent: &Tensor) -> Result<Tensor> {
        let mut g = cotangent.clone();
        for (layer, input) in self.layers.iter().zip(&tape.inputs).rev() {
            let expected = layer.output_shape(input.shape())?;
            if g.shape() != expected {
                return Err(Error::Dimension(format!(
                    "cotangent for layer '{}' is {}, expected {}",
                    layer.name,
                    g.shape(),
                    expected
                )));
            }
            g = layer.vjp(input, &g);
        }
        Ok(g)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv2d(c) | LayerKind::ConvTranspose2d(c) => c.weight.len(),
                LayerKind::AddBias { bias } => bias.len(),
                _ => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_offset: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDoc {
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestDoc {
    pub format: String,
    pub blob: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_shape: Option<Shape>,
    networks: BTreeMap<String, NetworkDoc>,
}

/// Networks loaded from a manifest, keyed by role.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub networks: BTreeMap<String, Network>,
    /// Optional image shape used for shape reports.
    pub reference_shape: Option<Shape>,
    pub sha256: String,
}

fn read_weights(
    blob: &[u8],
    offset: usize,
    count: usize,
    layer: &str,
) -> Result<Vec<f64>> {
    let end = offset + 4 * count;
    if end > blob.len() {
        return Err(Error::Model(format!(
            "layer '{layer}' needs blob bytes {offset}..{end} but the blob ends at byte offset {}",
            blob.len()
        )));
    }
    Ok(blob[offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn require(v: Option<usize>, field: &str, layer: &str) -> Result<usize> {
    v.ok_or_else(|| Error::Model(format!("layer '{layer}' is missing '{field}'")))
}

fn layer_from_doc(doc: &LayerDoc, blob: &[u8]) -> Result<Layer> {
    let name = doc.name.clone();
    let kind = match doc.kind.as_str() {
        "conv2d" | "conv_transpose2d" => {
            let in_channels = require(doc.in_channels, "in_channels", &name)?;
            let out_channels = require(doc.out_channels, "out_channels", &name)?;
            let kernel_size = require(doc.kernel_size, "kernel_size", &name)?;
            let stride = doc.stride.unwrap_or(1);
            if stride == 0 || kernel_size == 0 {
                return Err(Error::Model(format!(
                    "layer '{name}' has zero stride or kernel size"
                )));
            }
            let offset = require(doc.weight_offset, "weight_offset", &name)?;
            let weight = read_weights(
                blob,
                offset,
                in_channels * out_channels * kernel_size * kernel_size,
                &name,
            )?;
            let conv = Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding: doc.padding.unwrap_or(0),
                output_padding: doc.output_padding.unwrap_or(0),
                weight,
            };
            if doc.kind == "conv2d" {
                LayerKind::Conv2d(conv)
            } else {
                LayerKind::ConvTranspose2d(conv)
            }
        }
        "relu" => LayerKind::Relu,
        "leaky_relu" => LayerKind::LeakyRelu {
            slope: doc.slope.unwrap_or(0.01),
        },
        "add_bias" => {
            let channels = require(doc.channels, "channels", &name)?;
            let offset = require(doc.weight_offset, "weight_offset", &name)?;
            LayerKind::AddBias {
                bias: read_weights(blob, offset, channels, &name)?,
            }
        }
        other => {
            return Err(Error::Model(format!(
                "layer '{name}' has unsupported kind '{other}'"
            )))
        }
    };
    Ok(Layer { name, kind })
}

/// Parse a manifest and its blob. Bounds are checked before the checksum so a
/// truncated blob reports the first offending byte offset.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    if doc.format != MANIFEST_FORMAT {
        return Err(Error::Model(format!(
            "unsupported manifest format '{}', expected '{}'",
            doc.format, MANIFEST_FORMAT
        )));
    }
    if doc.networks.is_empty() {
        return Err(Error::Model(format!("manifest {} declares no networks", path.display())));
    }
    let blob_path = crate::forward::resolve_relative(path, &doc.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut networks = BTreeMap::new();
    for (role, net) in &doc.networks {
        if net.layers.is_empty() {
            return Err(Error::Model(format!("network '{role}' has no layers")));
        }
        let layers = net
            .layers
            .iter()
            .map(|l| layer_from_doc(l, &blob))
            .collect::<Result<Vec<_>>>()?;
        networks.insert(role.clone(), Network::new(layers));
    }
    let digest = hex::encode(Sha256::digest(&blob));
    if !digest.eq_ignore_ascii_case(&doc.sha256) {
        return Err(Error::Model(format!(
            "blob {} checksum mismatch: manifest says {}, blob hashes to {}",
            blob_path.display(),
            doc.sha256,
            digest
        )));
    }
    Ok(Manifest {
        networks,
        reference_shape: doc.reference_shape,
        sha256: digest,
    })
}

/// Serialize networks into a manifest and blob (`blob_name` next to the manifest).
/// Weights are stored as `f32`.
pub fn save_manifest(
    path: impl AsRef<Path>,
    blob_name: &str,
    networks: &[(&str, &Network)],
    reference_shape: Option<Shape>,
) -> Result<()> {
    let path = path.as_ref();
    let mut blob: Vec<u8> = Vec::new();
    let mut docs = BTreeMap::new();
    let push = |values: &[f64], blob: &mut Vec<u8>| {
        let off = blob.len();
        for &v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        off
    };
    for (role, net) in networks {
        let mut layers = Vec::new();
        for l in &net.layers {
            let mut d = LayerDoc {
                name: l.name.clone(),
                kind: l.kind_name().to_string(),
                in_channels: None,
                out_channels: None,
                kernel_size: None,
                stride: None,
                padding: None,
                output_padding: None,
                channels: None,
                slope: None,
                weight_offset: None,
            };
            match &l.kind {
                LayerKind::Conv2d(c) | LayerKind::ConvTranspose2d(c) => {
                    d.in_channels = Some(c.in_channels);
                    d.out_channels = Some(c.out_channels);
                    d.kernel_size = Some(c.kernel_size);
                    d.stride = Some(c.stride);
                    d.padding = Some(c.padding);
                    if c.output_padding > 0 {
                        d.output_padding = Some(c.output_padding);
                    }
                    d.weight_offset = Some(push(&c.weight, &mut blob));
                }
                LayerKind::AddBias { bias } => {
                    d.channels = Some(bias.len());
                    d.weight_offset = Some(push(bias, &mut blob));
                }
                LayerKind::LeakyRelu { slope } => d.slope = Some(*slope),
                LayerKind::Relu => {}
            }
            layers.push(d);
        }
        docs.insert(role.to_string(), NetworkDoc { layers });
    }
    let doc = ManifestDoc {
        format: MANIFEST_FORMAT.to_string(),
        blob: blob_name.to_string(),
        sha256: hex::encode(Sha256::digest(&blob)),
        reference_shape,
        networks: docs,
    };
    let blob_path = crate::forward::resolve_relative(path, blob_name);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let text = serde_json::to_string_pretty(&doc).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Convenience constructors used by fixtures and tests.
pub mod build {
    use super::*;
    use crate::rng::Rng;

    fn f32_round(v: f64) -> f64 {
        v as f32 as f64
    }

    pub fn conv2d(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f64>,
    ) -> Layer {
        assert_eq!(weight.len(), in_c * out_c * k * k);
        Layer {
            name: name.into(),
            kind: LayerKind::Conv2d(Conv {
                in_channels: in_c,
                out_channels: out_c,
                kernel_size: k,
                stride,
                padding,
                output_padding: 0,
                weight: weight.into_iter().map(f32_round).collect(),
            }),
        }
    }

    /// Transposed convolution; `output_padding = stride - 1` so that it exactly
    /// undoes the spatial shrink of a "same"-padded strided conv.
    pub fn conv_transpose2d(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f64>,
    ) -> Layer {
        assert_eq!(weight.len(), in_c * out_c * k * k);
        Layer {
            name: name.into(),
            kind: LayerKind::ConvTranspose2d(Conv {
                in_channels: in_c,
                out_channels: out_c,
                kernel_size: k,
                stride,
                padding,
                output_padding: stride - 1,
                weight: weight.into_iter().map(f32_round).collect(),
            }),
        }
    }

    pub fn bias(name: &str, bias: Vec<f64>) -> Layer {
        Layer {
            name: name.into(),
            kind: LayerKind::AddBias {
                bias: bias.into_iter().map(f32_round).collect(),
            },
        }
    }

    pub fn leaky_relu(name: &str, slope: f64) -> Layer {
        Layer {
            name: name.into(),
            kind: LayerKind::LeakyRelu { slope },
        }
    }

    pub fn relu(name: &str) -> Layer {
        Layer {
            name: name.into(),
            kind: LayerKind::Relu,
        }
    }

    /// He-style random weights of scale `gain / sqrt(fan_in)`.
    pub fn random_weights(rng: &mut Rng, count: usize, fan_in: usize, gain: f64) -> Vec<f64> {
        let s = gain / (fan_in as f64).sqrt();
        (0..count).map(|_| s * rng.gaussian()).collect()
    }
}
